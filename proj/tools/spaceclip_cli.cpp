// Command-line front end: train / evaluate / infer / ablate.
//
// Shared flags: --config FILE, --override key=value (repeatable),
// --output-dir DIR, --seed N. Environment: SPACE_CLIP_DATA_ROOT,
// SPACE_CLIP_BACKBONE_DIR. Every command prints and writes its fully resolved
// configuration before doing any work.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "spaceclip/runconfig.hpp"
#include "spaceclip/viz.hpp"

namespace fs = std::filesystem;
using namespace spaceclip;

namespace {

struct SharedArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
};

void add_shared(CLI::App* cmd, SharedArgs& args, bool config_required) {
    auto* opt = cmd->add_option("--config", args.config_path, "run configuration file (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--override", args.overrides,
                    "override a config field, e.g. --override train.epochs=1");
    cmd->add_option("--output-dir", args.output_dir, "output directory (overrides config)");
    cmd->add_option("--seed", args.seed, "override train.seed");
}

RunConfig resolve_config(const SharedArgs& args) {
    json j = args.config_path.empty() ? json::object() : parse_config_file(args.config_path);
    for (const auto& ov : args.overrides) apply_override(j, ov);
    RunConfig cfg = run_config_from_json(j);
    if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
    if (args.seed) cfg.train.seed = *args.seed;
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
}

void echo_config(const RunConfig& cfg) {
    const json j = to_json(cfg);
    std::cout << "effective config:\n" << j.dump(2) << std::endl;
    fs::create_directories(cfg.output_dir);
    std::ofstream out(fs::path(cfg.output_dir) / "effective_config.json");
    out << j.dump(2) << "\n";
}

std::string metrics_table_text(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::ostringstream os;
    os << "Method | AbsRel | SqRel | RMSE | RMSE log | δ<1.25 | δ<1.25² | δ<1.25³\n";
    for (const auto& [name, r] : rows) {
        os << name << " | " << std::fixed << std::setprecision(4) << r.abs_rel << " | "
           << r.sq_rel << " | " << std::setprecision(3) << r.rmse << " | "
           << std::setprecision(4) << r.rmse_log << " | " << std::setprecision(3) << r.d1
           << " | " << r.d2 << " | " << r.d3 << "\n";
    }
    return os.str();
}

int cmd_train(const SharedArgs& args) {
    RunConfig cfg = resolve_config(args);
    echo_config(cfg);
    auto backbone = make_backbone(cfg.backbone);
    LoadedData data = load_dataset(cfg.data);
    SpaceClipModel model(backbone, cfg.model, cfg.train.seed);
    std::cout << "model parameters: " << model.parameter_count() << "\n";

    std::ofstream run_log(fs::path(cfg.output_dir) / "run_log.jsonl");
    FitOptions opts;
    opts.out_dir = cfg.output_dir;
    opts.run_log = &run_log;
    opts.augment = cfg.data.augment;
    opts.backbone_desc = backbone_descriptor(cfg.backbone);
    opts.on_epoch = [](const EpochRecord& er) {
        std::cout << "epoch " << er.epoch << "  lr " << er.lr << "  loss " << er.mean_loss
                  << "  silog " << er.mean_silog << "  ssim " << er.mean_ssim
                  << "  val_abs_rel " << er.val_abs_rel << "\n";
    };
    FitResult result = fit(model, data.train, data.val, cfg.train, opts);
    std::cout << "best val abs_rel " << result.best_abs_rel << " at epoch "
              << result.best_epoch << "\n";
    return 0;
}

int cmd_evaluate(const SharedArgs& args, const std::string& checkpoint_path,
                 const std::string& split, const std::string& crop_flag) {
    json file_json =
        args.config_path.empty() ? json::object() : parse_config_file(args.config_path);
    for (const auto& ov : args.overrides) apply_override(file_json, ov);
    RunConfig cfg = run_config_from_json(file_json);
    if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;

    Checkpoint ck = load_checkpoint(checkpoint_path);
    if (file_json.contains("model") && file_json.at("model") != ck.model_config) {
        throw Error("checkpoint/config incompatibility: the config file's model section "
                    "differs from the checkpoint's embedded model config");
    }
    cfg.model = model_config_from_json(ck.model_config);
    cfg.backbone = backbone_config_from_descriptor(ck.backbone);
    if (!crop_flag.empty()) cfg.eval.crop = crop_flag;
    echo_config(cfg);

    auto backbone = make_backbone(cfg.backbone);
    SpaceClipModel model(backbone, cfg.model, cfg.train.seed);
    load_parameters(model, ck);

    DataConfig wanted = cfg.data;
    if (!wanted.synthetic) {
        // Only pull the split under evaluation off disk.
        if (split == "train") wanted.test_split.clear();
        else wanted.train_split.clear();
        if (split == "train") wanted.val_fraction = 0.0;
    }
    LoadedData data = load_dataset(wanted);
    const std::vector<Sample>& samples = split == "train" ? data.train : data.test;
    SPACECLIP_CHECK(!samples.empty(), "evaluation split '", split, "' is empty");

    EvalProtocol protocol;
    protocol.cap_min = cfg.eval.cap_min;
    protocol.cap_max = cfg.eval.cap_max;
    protocol.crop = eval_crop_from_string(cfg.eval.crop);
    protocol.split = split;
    std::vector<MetricsReport> reports;
    for (const auto& s : samples) {
        DepthMap pred = model.predict(s.image);
        reports.push_back(compute_metrics(pred, gt_for_loss(s.gt, model.config()), protocol));
    }
    MetricsReport agg = aggregate_reports(reports);

    const std::string table = metrics_table_text({{"checkpoint", agg}});
    std::cout << table;
    fs::create_directories(cfg.output_dir);
    std::ofstream(fs::path(cfg.output_dir) / "metrics_table.txt") << table;
    std::ofstream(fs::path(cfg.output_dir) / "metrics.json") << to_json(agg).dump(2) << "\n";
    return 0;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& input,
              const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    BackboneConfig bb_cfg = backbone_config_from_descriptor(ck.backbone);
    ModelConfig model_cfg = model_config_from_json(ck.model_config);
    TrainConfig train_cfg = train_config_from_json(ck.train_config);
    auto backbone = make_backbone(bb_cfg);
    SpaceClipModel model(backbone, model_cfg, train_cfg.seed);
    load_parameters(model, ck);

    std::vector<fs::path> inputs;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file() && e.path().extension() == ".png")
                inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
    } else {
        inputs.emplace_back(input);
    }
    SPACECLIP_CHECK(!inputs.empty(), "no input images found under ", input);

    int done = 0;
    for (const auto& p : inputs) {
        Image img;
        try {
            img = load_image_png(p.string());
        } catch (const std::exception& e) {
            std::cerr << "warning: skipping unreadable image " << p << ": " << e.what()
                      << "\n";
            continue;
        }
        img = resize_image_bilinear(img, kProcessRows, kProcessCols);
        DepthMap pred = model.predict(img);
        export_depth_artifacts(pred, out_dir, p.stem().string(), model_cfg.min_depth,
                               model_cfg.max_depth);
        ++done;
    }
    SPACECLIP_CHECK(done > 0, "no readable images under ", input);
    std::cout << "wrote " << 2 * done << " files for " << done << " images to " << out_dir
              << "\n";
    return 0;
}

int cmd_ablate(const SharedArgs& args) {
    RunConfig cfg = resolve_config(args);
    echo_config(cfg);
    auto backbone = make_backbone(cfg.backbone);
    LoadedData data = load_dataset(cfg.data);

    AblationOptions opts;
    opts.out_dir = cfg.output_dir;
    opts.protocol.cap_min = cfg.eval.cap_min;
    opts.protocol.cap_max = cfg.eval.cap_max;
    opts.protocol.crop = eval_crop_from_string(cfg.eval.crop);
    opts.protocol.split = cfg.data.synthetic ? "synthetic" : "eigen_test";
    opts.backbone_desc = backbone_descriptor(cfg.backbone);
    opts.augment = cfg.data.augment;
    opts.row_hook = [](const AblationResult& r) {
        std::cout << r.row.name << ": params " << r.param_count << ", abs_rel "
                  << r.metrics.abs_rel << "\n";
    };
    auto rows = run_ablation(ablation_plan(), cfg.model, backbone, data.train, data.test,
                             cfg.train, opts);
    std::cout << ablation_table_text(rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SPACE-CLIP depth estimation toolkit"};
    app.require_subcommand(1);

    SharedArgs train_args, eval_args, ablate_args;
    std::string eval_checkpoint, eval_split = "test", eval_crop;
    std::string infer_checkpoint, infer_input, infer_out = "inference";

    CLI::App* train = app.add_subcommand("train", "train a model from a run config");
    add_shared(train, train_args, true);

    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    add_shared(evaluate, eval_args, true);
    evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    evaluate->add_option("--split", eval_split, "split to evaluate: test or train")
        ->check(CLI::IsMember({"test", "train"}));
    evaluate->add_option("--crop", eval_crop, "evaluation crop: garg or none")
        ->check(CLI::IsMember({"garg", "none"}));

    CLI::App* infer = app.add_subcommand("infer", "predict depth for images");
    infer->add_option("--checkpoint", infer_checkpoint, "checkpoint file")->required();
    infer->add_option("--input", infer_input, "image file or directory")->required();
    infer->add_option("--output-dir", infer_out, "output directory");

    CLI::App* ablate = app.add_subcommand("ablate", "run the four-configuration study");
    add_shared(ablate, ablate_args, true);

    CLI11_PARSE(app, argc, argv);
    try {
        if (train->parsed()) return cmd_train(train_args);
        if (evaluate->parsed())
            return cmd_evaluate(eval_args, eval_checkpoint, eval_split, eval_crop);
        if (infer->parsed()) return cmd_infer(infer_checkpoint, infer_input, infer_out);
        if (ablate->parsed()) return cmd_ablate(ablate_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
