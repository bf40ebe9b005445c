#pragma once

// Four-row component study driven from one switchboard: baseline, +FiLM,
// +structural pathway, and the full model. Every row shares the same seed,
// data order, and evaluation protocol so differences are attributable to
// architecture alone. Artifacts are written per row as soon as the row
// finishes, and the comparison table is rewritten after each row, so a failed
// row leaves the completed ones on disk.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "spaceclip/training.hpp"

namespace spaceclip {

struct AblationRow {
    std::string name;
    bool use_film = false;
    bool use_structural = false;
};

inline std::vector<AblationRow> ablation_plan() {
    return {{"Baseline", false, false},
            {"Baseline + FiLM", true, false},
            {"Baseline + Structural Pathway", false, true},
            {"SPACE-CLIP (Ours)", true, true}};
}

struct AblationResult {
    AblationRow row;
    std::int64_t param_count = 0;
    MetricsReport metrics;
};

inline std::string ablation_table_text(const std::vector<AblationResult>& rows) {
    std::ostringstream os;
    os << "# | Model Configuration | FiLM | Struct. Path | AbsRel | SqRel | RMSE | "
          "RMSE log | d<1.25 | d<1.25^2 | d<1.25^3\n";
    int i = 1;
    for (const auto& r : rows) {
        os << i++ << " | " << r.row.name << " | " << (r.row.use_film ? "yes" : "-")
           << " | " << (r.row.use_structural ? "yes" : "-") << " | " << std::fixed
           << std::setprecision(4) << r.metrics.abs_rel << " | " << r.metrics.sq_rel
           << " | " << std::setprecision(3) << r.metrics.rmse << " | "
           << std::setprecision(4) << r.metrics.rmse_log << " | " << std::setprecision(3)
           << r.metrics.d1 << " | " << r.metrics.d2 << " | " << r.metrics.d3 << "\n";
    }
    return os.str();
}

struct AblationOptions {
    std::string out_dir;
    EvalProtocol protocol;
    json backbone_desc = json::object();
    bool augment = false;
    std::function<void(const AblationResult&)> row_hook;  // runs after each row
};

inline void write_ablation_files(const std::string& out_dir,
                                 const std::vector<AblationResult>& rows) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream txt(fs::path(out_dir) / "ablation_table.txt");
    txt << ablation_table_text(rows);
    json j = json::array();
    for (const auto& r : rows) {
        json row;
        row["name"] = r.row.name;
        row["use_film"] = r.row.use_film;
        row["use_structural"] = r.row.use_structural;
        row["param_count"] = r.param_count;
        row["metrics"] = to_json(r.metrics);
        j.push_back(row);
    }
    std::ofstream(fs::path(out_dir) / "ablation_table.json") << j.dump(2) << "\n";
}

/// Train and evaluate every plan row with a shared TrainConfig. Throws after
/// preserving partial results if any row fails.
inline std::vector<AblationResult> run_ablation(
    const std::vector<AblationRow>& plan, const ModelConfig& base_cfg,
    const std::shared_ptr<const Backbone>& backbone,
    const std::vector<Sample>& train_data, const std::vector<Sample>& eval_data,
    const TrainConfig& train_cfg, const AblationOptions& opts) {
    std::vector<AblationResult> results;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        try {
            ModelConfig cfg = base_cfg;
            cfg.use_film = plan[i].use_film;
            cfg.use_structural = plan[i].use_structural;
            SpaceClipModel model(backbone, cfg, train_cfg.seed);

            FitOptions fit_opts;
            fit_opts.augment = opts.augment;
            fit_opts.backbone_desc = opts.backbone_desc;
            std::string row_dir;
            if (!opts.out_dir.empty()) {
                row_dir = (std::filesystem::path(opts.out_dir) /
                           ("row" + std::to_string(i + 1)))
                              .string();
                fit_opts.out_dir = row_dir;
            }
            fit(model, train_data, eval_data, train_cfg, fit_opts);

            AblationResult res;
            res.row = plan[i];
            res.param_count = model.parameter_count();
            res.metrics = evaluate_model(model, eval_data, opts.protocol);
            results.push_back(res);
            if (!row_dir.empty()) {
                std::ofstream(std::filesystem::path(row_dir) / "metrics.json")
                    << to_json(res.metrics).dump(2) << "\n";
            }
            if (!opts.out_dir.empty()) write_ablation_files(opts.out_dir, results);
            if (opts.row_hook) opts.row_hook(res);
        } catch (const std::exception& e) {
            if (!opts.out_dir.empty()) write_ablation_files(opts.out_dir, results);
            throw Error(detail::format_msg("ablation row ", i + 1, " (", plan[i].name,
                                           ") failed: ", e.what(), "; ", results.size(),
                                           " completed rows preserved"));
        }
    }
    return results;
}

}  // namespace spaceclip
