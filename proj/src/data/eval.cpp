#include <chrono>
#include <cmath>
#include <limits>

#include "msfpt/data.hpp"
#include "msfpt/metrics.hpp"
#include "msfpt/model.hpp"
#include "msfpt/parallel.hpp"
#include "msfpt/trainer.hpp"

namespace msfpt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// NaN marks an undefined coefficient (too few rows or a constant column)
// and serializes as null.
template <typename F>
double guarded(F f) {
    try {
        return f();
    } catch (const UndefinedCorrelationError&) {
        return kNaN;
    } catch (const ContractError&) {
        return kNaN;
    }
}

nlohmann::ordered_json null_if_nan(double v) {
    return std::isnan(v) ? nlohmann::ordered_json() : nlohmann::ordered_json(v);
}

double number_or_nan(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

void fill_aggregates(EvalReport& report) {
    std::vector<double> pred, mos;
    for (const auto& r : report.rows) {
        pred.push_back(r.score_raw);
        mos.push_back(r.mos);
    }
    report.plcc = guarded([&] { return plcc(pred, mos); });
    report.srcc = guarded([&] { return srcc(pred, mos); });
    report.krcc = guarded([&] { return krcc(pred, mos); });
    report.main_score = main_score(report.plcc, report.srcc);
}

nlohmann::ordered_json EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["config"] = config;
    auto& out = j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        out.push_back({{"ref_path", r.ref_path},
                       {"dist_path", r.dist_path},
                       {"mos", r.mos},
                       {"score", r.score},
                       {"score_raw", r.score_raw}});
    }
    j["metrics"] = {{"plcc", null_if_nan(plcc)},
                    {"srcc", null_if_nan(srcc)},
                    {"krcc", null_if_nan(krcc)},
                    {"main_score", null_if_nan(main_score)}};
    j["timing"] = {{"seconds", seconds}, {"rows", rows.size()}};
    return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.config = j.at("config");
        for (const auto& row : j.at("rows")) {
            r.rows.push_back({row.at("ref_path").get<std::string>(), row.at("dist_path").get<std::string>(),
                              row.at("mos").get<double>(), row.at("score").get<double>(),
                              row.at("score_raw").get<double>()});
        }
        const auto& m = j.at("metrics");
        r.plcc = number_or_nan(m.at("plcc"));
        r.srcc = number_or_nan(m.at("srcc"));
        r.krcc = number_or_nan(m.at("krcc"));
        r.main_score = number_or_nan(m.at("main_score"));
        r.seconds = j.at("timing").at("seconds").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed evaluation report: ") + e.what());
    }
    return r;
}

EvalReport evaluate(const Manifest& manifest, const Checkpoint& ckpt, const EvalOptions& opts) {
    const auto start = std::chrono::steady_clock::now();
    const MosScale mos_scale = MosScale::from_metadata(ckpt.metadata);
    NoGradGuard no_grad;
    EvalReport report;
    report.rows.resize(manifest.rows.size());
    parallel_for(manifest.rows.size(), opts.threads, [&](std::size_t i) {
        const ManifestRow& row = manifest.rows[i];
        try {
            const TensorF ref = decode_image(row.ref_path);
            const TensorF dist = decode_image(row.dist_path);
            const double s = ensemble_pair(ref, dist, opts.patches, ckpt.config, ckpt.params, opts.scales).final;
            report.rows[i] = {row.ref_path.string(), row.dist_path.string(), row.mos, s, mos_scale.denormalize(s)};
        } catch (const Error& e) {
            throw Error(e.code(), "row " + std::to_string(row.row) + ": " + e.what());
        }
    });
    fill_aggregates(report);
    report.config = {{"model", ckpt.config.to_json()},
                     {"scales", opts.scales.to_string()},
                     {"patches", opts.patches},
                     {"threads", opts.threads},
                     {"mos_min", mos_scale.min},
                     {"mos_max", mos_scale.max},
                     {"manifest_root", manifest.root.string()}};
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace msfpt
