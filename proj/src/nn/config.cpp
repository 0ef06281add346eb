#include "msfpt/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "msfpt/error.hpp"

namespace msfpt {

namespace {
constexpr double kStandardScales[] = {1.0, 2.0, 3.0, 0.5};

bool is_standard(double s) {
    return std::find(std::begin(kStandardScales), std::end(kStandardScales), s) != std::end(kStandardScales);
}
}  // namespace

ScaleSet ScaleSet::standard() { return ScaleSet({1.0, 2.0, 3.0, 0.5}); }

ScaleSet::ScaleSet(std::vector<double> scales) : scales_(std::move(scales)) {
    if (scales_.empty()) throw ConfigError("scale set is empty");
    for (std::size_t i = 0; i < scales_.size(); ++i) {
        if (!is_standard(scales_[i])) {
            throw ConfigError("unsupported scale " + std::to_string(scales_[i]) + " (expected 1, 2, 3 or 0.5)");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (scales_[j] == scales_[i]) throw ConfigError("duplicate scale " + scale_label(scales_[i]));
        }
    }
}

ScaleSet ScaleSet::parse(std::string_view csv) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const std::size_t end = std::min(csv.find(',', start), csv.size());
        std::string token(csv.substr(start, end - start));
        token.erase(std::remove_if(token.begin(), token.end(), [](unsigned char c) { return std::isspace(c); }),
                    token.end());
        try {
            std::size_t used = 0;
            out.push_back(std::stod(token, &used));
            if (used != token.size()) throw std::invalid_argument(token);
        } catch (const std::exception&) {
            throw ConfigError("cannot parse scale '" + token + "'");
        }
        start = end + 1;
    }
    return ScaleSet(std::move(out));
}

bool ScaleSet::contains(double scale) const noexcept {
    return std::find(scales_.begin(), scales_.end(), scale) != scales_.end();
}

std::string ScaleSet::to_string() const {
    std::string s;
    for (std::size_t i = 0; i < scales_.size(); ++i) {
        if (i) s += ',';
        s += scale_label(scales_[i]);
    }
    return s;
}

std::string scale_label(double scale) {
    if (scale == 0.5) return "0.5";
    return std::to_string(static_cast<int>(scale));
}

std::string scale_group(double scale) {
    if (scale == 0.5) return "scale05";
    return "scale" + std::to_string(static_cast<int>(scale));
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_shape() {
    ModelConfig c;
    c.d_model = 128;
    c.head_hidden = 128;
    c.d_mlp = 512;
    c.target_h = 21;
    c.target_w = 21;
    c.block_channels = 320;
    return c;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("model config field '" + field + "' " + why);
    };
    if (d_model == 0) fail("d_model", "must be positive");
    if (heads == 0) fail("heads", "must be positive");
    if (d_model % heads != 0) fail("heads", "must divide d_model");
    if (d_mlp == 0) fail("d_mlp", "must be positive");
    if (head_hidden == 0) fail("head_hidden", "must be positive");
    if (!(ln_eps > 0.0)) fail("ln_eps", "must be positive");
    if (target_h == 0 || target_w == 0) fail("target", "must be positive");
    if (block_channels == 0) fail("block_channels", "must be positive");
    if (num_blocks == 0 || num_blocks % 2 != 0) fail("num_blocks", "must be a positive even number");
    if (patch_size < 32) fail("patch_size", "must be at least 32");
    (void)scale_set();
}

nlohmann::json ModelConfig::to_json() const {
    return {
        {"d_model", d_model},
        {"layers", layers},
        {"heads", heads},
        {"d_mlp", d_mlp},
        {"head_hidden", head_hidden},
        {"mlp_activation", mlp_activation == Activation::relu ? "relu" : "gelu"},
        {"ln_eps", ln_eps},
        {"target_h", target_h},
        {"target_w", target_w},
        {"block_channels", block_channels},
        {"num_blocks", num_blocks},
        {"patch_size", patch_size},
        {"scales", scales},
    };
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("model config must be a JSON object");
    ModelConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "d_model") c.d_model = value.get<std::size_t>();
            else if (key == "layers") c.layers = value.get<std::size_t>();
            else if (key == "heads") c.heads = value.get<std::size_t>();
            else if (key == "d_mlp") c.d_mlp = value.get<std::size_t>();
            else if (key == "head_hidden") c.head_hidden = value.get<std::size_t>();
            else if (key == "ln_eps") c.ln_eps = value.get<double>();
            else if (key == "target_h") c.target_h = value.get<std::size_t>();
            else if (key == "target_w") c.target_w = value.get<std::size_t>();
            else if (key == "block_channels") c.block_channels = value.get<std::size_t>();
            else if (key == "num_blocks") c.num_blocks = value.get<std::size_t>();
            else if (key == "patch_size") c.patch_size = value.get<std::size_t>();
            else if (key == "scales") c.scales = value.get<std::vector<double>>();
            else if (key == "mlp_activation") {
                const auto name = value.get<std::string>();
                if (name == "relu") c.mlp_activation = Activation::relu;
                else if (name == "gelu") c.mlp_activation = Activation::gelu;
                else throw ConfigError("unknown mlp_activation '" + name + "'");
            } else {
                throw ConfigError("unknown model config field '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace msfpt
