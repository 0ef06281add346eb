// msfpt: train, score, evaluate and inspect the multi-scale quality model.
//
// Failures print one line "error: <code>: <message>" on stderr and exit 1.
// Usage errors exit 2.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include "msfpt/binary_io.hpp"
#include "msfpt/checkpoint.hpp"
#include "msfpt/data.hpp"
#include "msfpt/model.hpp"
#include "msfpt/parallel.hpp"
#include "msfpt/trainer.hpp"

using namespace msfpt;
using ojson = nlohmann::ordered_json;

namespace {

nlohmann::json read_json(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Every requested scale needs its own trained transformer in the checkpoint.
ScaleSet checked_scales(const std::string& csv, const ModelConfig& config) {
    const ScaleSet scales = csv.empty() ? config.scale_set() : ScaleSet::parse(csv);
    for (double s : scales.values()) {
        if (std::find(config.scales.begin(), config.scales.end(), s) == config.scales.end()) {
            throw ConfigError("checkpoint has no model for scale " + scale_label(s));
        }
    }
    return scales;
}

ojson score_json(const PairScore& s, const MosScale& mos) {
    ojson per = ojson::array();
    for (std::size_t i = 0; i < s.per_scale.scales.size(); ++i) {
        per.push_back({{"scale", scale_label(s.per_scale.scales[i])},
                       {"score", s.per_scale.values[i]},
                       {"score_raw", mos.denormalize(s.per_scale.values[i])}});
    }
    return {{"score", s.final}, {"score_raw", mos.denormalize(s.final)}, {"per_scale", per}};
}

struct TrainArgs {
    std::string manifest, config, out, log;
    std::optional<std::uint64_t> seed;
};

void run_train(const TrainArgs& a) {
    const nlohmann::json j = read_json(a.config);
    if (!j.is_object() || !j.contains("train")) throw ConfigError("config needs a \"train\" object");
    for (const auto& [key, value] : j.items()) {
        if (key != "model" && key != "train") throw ConfigError("unknown config section '" + key + "'");
    }
    const ModelConfig mc = j.contains("model") ? ModelConfig::from_json(j.at("model")) : ModelConfig::desk();
    TrainConfig tc = TrainConfig::from_json(j.at("train"));
    if (a.seed) tc.seed = *a.seed;
    const std::size_t cap = threads_from_env();
    tc.threads = j.at("train").contains("threads") ? std::min(tc.threads, cap) : cap;

    const Manifest m = load_manifest(a.manifest);
    std::vector<TrainSample> data;
    for (const auto& row : m.rows) {
        data.push_back({decode_image(row.ref_path), decode_image(row.dist_path), row.mos});
    }
    std::ofstream log_file;
    if (!a.log.empty()) {
        log_file.open(a.log);
        if (!log_file) throw IoError("cannot open '" + a.log + "' for writing");
    }
    const TrainResult result = train(data, tc, mc, a.log.empty() ? nullptr : &log_file);
    save_checkpoint(a.out, result.checkpoint);

    ojson summary = {{"checkpoint", a.out}, {"samples", data.size()}, {"steps", tc.total_steps}};
    if (!result.history.empty()) {
        summary["first_loss"] = result.history.front().loss;
        summary["final_loss"] = result.history.back().loss;
    }
    std::cout << summary.dump() << '\n';
}

struct ScoreArgs {
    std::string ref, dist, ckpt, scales;
    std::vector<std::string> ref_fvol, dist_fvol;
    std::size_t patches = 1;
};

void run_score(const ScoreArgs& a) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    const MosScale mos = MosScale::from_metadata(ck.metadata);
    NoGradGuard no_grad;
    ojson out;
    if (!a.ref_fvol.empty() || !a.dist_fvol.empty()) {
        if (!a.ref.empty() || !a.dist.empty()) throw ContractError("give either images or feature volumes, not both");
        if (a.ref_fvol.size() != a.dist_fvol.size()) {
            throw ContractError("--ref-fvol and --dist-fvol need the same number of files");
        }
        std::vector<FeatureVolume<float>> ref, dist;
        for (std::size_t i = 0; i < a.ref_fvol.size(); ++i) {
            ref.push_back(load_fvol(a.ref_fvol[i], ck.config.channels()));
            dist.push_back(load_fvol(a.dist_fvol[i], ck.config.channels()));
            checked_scales(scale_label(ref.back().scale), ck.config);
        }
        out = score_json(score_pair_volumes(ref, dist, ck.config, ck.params), mos);
    } else {
        if (a.ref.empty() || a.dist.empty()) throw ContractError("--ref and --dist are required");
        const ScaleSet scales = checked_scales(a.scales, ck.config);
        const TensorF ref = decode_image(fs::path(a.ref)), dist = decode_image(fs::path(a.dist));
        out = score_json(ensemble_pair(ref, dist, a.patches, ck.config, ck.params, scales, threads_from_env()), mos);
        out["scales"] = scales.to_string();
        out["patches"] = a.patches;
    }
    std::cout << out.dump() << '\n';
}

struct EvalArgs {
    std::string manifest, ckpt, report, scales;
    std::size_t patches = 1;
};

void run_evaluate(const EvalArgs& a) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    EvalOptions opts;
    opts.scales = checked_scales(a.scales, ck.config);
    opts.patches = a.patches;
    opts.threads = threads_from_env();
    const EvalReport report = evaluate(load_manifest(a.manifest), ck, opts);
    write_text(a.report, report.to_json().dump(2) + "\n");
    std::cout << report.to_json()["metrics"].dump() << '\n';
}

struct DumpArgs {
    std::string image, ckpt, out;
    double scale = 1.0;
};

void run_dump(const DumpArgs& a) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    checked_scales(scale_label(a.scale), ck.config);
    NoGradGuard no_grad;
    const TensorF img = decode_image(fs::path(a.image));
    validate_image(img);
    const auto f = extract_features(rescale_image(img, a.scale), a.scale, ck.config, ck.params);
    save_fvol(f, a.out);
    std::cout << ojson{{"out", a.out},
                       {"scale", scale_label(a.scale)},
                       {"channels", f.channels()},
                       {"height", f.height()},
                       {"width", f.width()}}
                     .dump()
              << '\n';
}

struct SyntheticArgs {
    std::string out;
    std::size_t count = 8;
    std::size_t size = 64;
    std::uint64_t seed = 0;
};

void run_synthetic(const SyntheticArgs& a) {
    const fs::path manifest = write_synthetic(a.out, make_synthetic(a.count, a.size, a.seed));
    std::cout << ojson{{"manifest", manifest.string()}, {"pairs", a.count}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-scale transformer image quality model"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train on a manifest and write a checkpoint");
    train_cmd->add_option("--manifest", train_args.manifest, "CSV with ref_path,dist_path,mos")->required();
    train_cmd->add_option("--config", train_args.config, "JSON with \"model\" and \"train\" sections")->required();
    train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();
    train_cmd->add_option("--seed", train_args.seed, "Overrides train.seed");
    train_cmd->add_option("--log", train_args.log, "Loss history CSV");

    ScoreArgs score_args;
    auto* score_cmd = app.add_subcommand("score", "Score one reference/distorted pair");
    score_cmd->add_option("--ref", score_args.ref, "Reference image");
    score_cmd->add_option("--dist", score_args.dist, "Distorted image");
    score_cmd->add_option("--ckpt", score_args.ckpt, "Checkpoint")->required();
    score_cmd->add_option("--scales", score_args.scales, "Comma-separated subset of 1,2,3,0.5");
    score_cmd->add_option("--patches", score_args.patches, "Ensemble crop count M")->check(CLI::PositiveNumber);
    score_cmd->add_option("--ref-fvol", score_args.ref_fvol, "Reference feature volumes, one per scale")
        ->delimiter(',');
    score_cmd->add_option("--dist-fvol", score_args.dist_fvol, "Distorted feature volumes, same order")
        ->delimiter(',');

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("evaluate", "Score a manifest and write a JSON report");
    eval_cmd->add_option("--manifest", eval_args.manifest)->required();
    eval_cmd->add_option("--ckpt", eval_args.ckpt)->required();
    eval_cmd->add_option("--report", eval_args.report)->required();
    eval_cmd->add_option("--scales", eval_args.scales);
    eval_cmd->add_option("--patches", eval_args.patches)->check(CLI::PositiveNumber);

    DumpArgs dump_args;
    auto* dump_cmd = app.add_subcommand("dump-features", "Write backbone features of an image as .fvol");
    dump_cmd->add_option("--image", dump_args.image)->required();
    dump_cmd->add_option("--scale", dump_args.scale)->required();
    dump_cmd->add_option("--ckpt", dump_args.ckpt)->required();
    dump_cmd->add_option("--out", dump_args.out)->required();

    SyntheticArgs syn_args;
    auto* syn_cmd = app.add_subcommand("make-synthetic", "Write a synthetic texture/distortion set");
    syn_cmd->add_option("--out", syn_args.out, "Output directory")->required();
    syn_cmd->add_option("--count", syn_args.count)->check(CLI::PositiveNumber);
    syn_cmd->add_option("--size", syn_args.size);
    syn_cmd->add_option("--seed", syn_args.seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return e.get_exit_code() == 0 ? code : 2;
    }

    try {
        if (*train_cmd) run_train(train_args);
        else if (*score_cmd) run_score(score_args);
        else if (*eval_cmd) run_evaluate(eval_args);
        else if (*dump_cmd) run_dump(dump_args);
        else if (*syn_cmd) run_synthetic(syn_args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
