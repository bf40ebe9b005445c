#pragma once

// Run configuration file handling. The file is hierarchical JSON whose keys
// mirror the config structs one-to-one; --override key=value edits resolve
// dotted paths into the tree before parsing. Every command echoes its fully
// resolved config so a run can be reproduced from its own output directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spaceclip/ablation.hpp"
#include "spaceclip/clip_vit.hpp"
#include "spaceclip/training.hpp"

namespace spaceclip {

struct SyntheticSpec {
    int n = 16;
    std::uint64_t seed = 42;
    double gt_keep = 1.0;
};

struct DataConfig {
    std::string root;
    std::string train_split;
    std::string test_split;
    std::optional<SyntheticSpec> synthetic;
    bool augment = true;
    double val_fraction = 0.05;  // tail holdout from the training list
};

struct EvalConfig {
    double cap_min = 1e-3;
    double cap_max = 80.0;
    std::string crop = "garg";
};

struct BackboneConfig {
    std::string model_id = "openai/clip-vit-base-patch16";
    std::optional<std::uint64_t> stub_seed;
    int stub_hidden_dim = 64;
    BackboneSpec spec;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;
    BackboneConfig backbone;
    std::string output_dir = "runs/default";
};

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

inline json to_json(const RunConfig& c) {
    json j;
    j["model"] = to_json(c.model);
    j["train"] = to_json(c.train);
    json data;
    data["root"] = c.data.root;
    data["train_split"] = c.data.train_split;
    data["test_split"] = c.data.test_split;
    data["augment"] = c.data.augment;
    data["val_fraction"] = c.data.val_fraction;
    if (c.data.synthetic) {
        data["synthetic"] = json{{"n", c.data.synthetic->n},
                                 {"seed", c.data.synthetic->seed},
                                 {"gt_keep", c.data.synthetic->gt_keep}};
    }
    j["data"] = data;
    j["eval"] = json{{"cap", std::vector<double>{c.eval.cap_min, c.eval.cap_max}},
                     {"crop", c.eval.crop}};
    json bb;
    bb["model_id"] = c.backbone.model_id;
    if (c.backbone.stub_seed) {
        bb["stub"] = json{{"seed", *c.backbone.stub_seed},
                          {"hidden_dim", c.backbone.stub_hidden_dim}};
    }
    bb["spec"] = to_json(c.backbone.spec);
    j["backbone"] = bb;
    j["output_dir"] = c.output_dir;
    return j;
}

namespace detail {

inline void check_known_keys(const json& j, const char* section,
                             std::initializer_list<const char*> known) {
    if (!j.is_object()) return;
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known)
            if (key == k) ok = true;
        SPACECLIP_CHECK(ok, "unknown config field '", section, key, "'");
    }
}

}  // namespace detail

inline void validate_run_config_keys(const json& j) {
    detail::check_known_keys(j, "",
                             {"model", "train", "data", "eval", "backbone", "output_dir"});
    if (j.contains("model"))
        detail::check_known_keys(j.at("model"), "model.",
                                 {"semantic_indices", "structural_indices",
                                  "decoder_channels", "dropout", "use_film",
                                  "use_structural", "min_depth", "max_depth",
                                  "output_size", "film_hidden_width", "head_width",
                                  "input_mode"});
    if (j.contains("train"))
        detail::check_known_keys(j.at("train"), "train.",
                                 {"lr", "weight_decay", "scheduler_step_epochs",
                                  "scheduler_gamma", "epochs", "batch_size", "seed",
                                  "clip_norm", "adam_beta1", "adam_beta2", "adam_eps",
                                  "loss"});
    if (j.contains("train") && j.at("train").contains("loss"))
        detail::check_known_keys(j.at("train").at("loss"), "train.loss.",
                                 {"lambda_ssim", "silog_lambda", "silog_alpha",
                                  "ssim_window", "ssim_sigma", "min_depth", "max_depth",
                                  "ssim_c1", "ssim_c2"});
    if (j.contains("data"))
        detail::check_known_keys(j.at("data"), "data.",
                                 {"root", "train_split", "test_split", "synthetic",
                                  "augment", "val_fraction"});
    if (j.contains("data") && j.at("data").contains("synthetic"))
        detail::check_known_keys(j.at("data").at("synthetic"), "data.synthetic.",
                                 {"n", "seed", "gt_keep"});
    if (j.contains("eval"))
        detail::check_known_keys(j.at("eval"), "eval.", {"cap", "crop"});
    if (j.contains("backbone"))
        detail::check_known_keys(j.at("backbone"), "backbone.",
                                 {"model_id", "stub", "spec"});
}

inline RunConfig run_config_from_json(const json& j) {
    validate_run_config_keys(j);
    RunConfig c;
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("data")) {
        const json& d = j.at("data");
        detail::get_field(d, "root", c.data.root);
        detail::get_field(d, "train_split", c.data.train_split);
        detail::get_field(d, "test_split", c.data.test_split);
        detail::get_field(d, "augment", c.data.augment);
        detail::get_field(d, "val_fraction", c.data.val_fraction);
        if (d.contains("synthetic")) {
            SyntheticSpec s;
            detail::get_field(d.at("synthetic"), "n", s.n);
            detail::get_field(d.at("synthetic"), "seed", s.seed);
            detail::get_field(d.at("synthetic"), "gt_keep", s.gt_keep);
            c.data.synthetic = s;
        }
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        if (e.contains("cap")) {
            auto cap = e.at("cap").get<std::vector<double>>();
            SPACECLIP_CHECK(cap.size() == 2, "config field 'eval.cap' must be [min, max]");
            c.eval.cap_min = cap[0];
            c.eval.cap_max = cap[1];
        }
        detail::get_field(e, "crop", c.eval.crop);
        eval_crop_from_string(c.eval.crop);
    }
    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        detail::get_field(b, "model_id", c.backbone.model_id);
        if (b.contains("stub")) {
            std::uint64_t seed = 7;
            detail::get_field(b.at("stub"), "seed", seed);
            c.backbone.stub_seed = seed;
            detail::get_field(b.at("stub"), "hidden_dim", c.backbone.stub_hidden_dim);
        }
        if (b.contains("spec")) c.backbone.spec = backbone_spec_from_json(b.at("spec"));
    }
    detail::get_field(j, "output_dir", c.output_dir);
    return c;
}

/// Parse a config file, reporting the line and column on syntax errors.
inline json parse_config_file(const std::string& path) {
    std::ifstream in(path);
    SPACECLIP_CHECK(in, "cannot open config file: ", path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw Error(detail::format_msg("config parse error in ", path, " at line ", line,
                                       ", column ", col, ": ", e.what()));
    }
}

/// Apply a dotted-path override like "train.epochs=1". Values are parsed as
/// JSON when possible (numbers, booleans, arrays) and as strings otherwise.
inline void apply_override(json& j, const std::string& spec) {
    const auto eq = spec.find('=');
    SPACECLIP_CHECK(eq != std::string::npos, "override must look like key.path=value, got '",
                    spec, "'");
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);
    json* node = &j;
    std::size_t begin = 0;
    while (true) {
        const auto dot = path.find('.', begin);
        const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
        SPACECLIP_CHECK(!key.empty(), "empty key segment in override '", spec, "'");
        if (dot == std::string::npos) {
            json parsed = json::parse(value, nullptr, false);
            (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
            return;
        }
        node = &(*node)[key];
        begin = dot + 1;
    }
}

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

inline std::shared_ptr<const Backbone> make_backbone(const BackboneConfig& cfg) {
    if (cfg.stub_seed) {
        return std::make_shared<StubBackbone>(*cfg.stub_seed, cfg.stub_hidden_dim);
    }
    BackboneSpec spec = cfg.spec;
    spec.model_id = cfg.model_id;
    return std::make_shared<ClipVitBackbone>(cfg.model_id, spec);
}

inline json backbone_descriptor(const BackboneConfig& cfg) {
    json j;
    j["model_id"] = cfg.model_id;
    if (cfg.stub_seed) {
        j["stub"] = json{{"seed", *cfg.stub_seed}, {"hidden_dim", cfg.stub_hidden_dim}};
    } else {
        j["spec"] = to_json(cfg.spec);
    }
    return j;
}

inline BackboneConfig backbone_config_from_descriptor(const json& j) {
    BackboneConfig c;
    detail::get_field(j, "model_id", c.model_id);
    if (j.contains("stub")) {
        std::uint64_t seed = 7;
        detail::get_field(j.at("stub"), "seed", seed);
        c.stub_seed = seed;
        detail::get_field(j.at("stub"), "hidden_dim", c.stub_hidden_dim);
    }
    if (j.contains("spec")) c.spec = backbone_spec_from_json(j.at("spec"));
    return c;
}

inline std::string resolve_data_root(const DataConfig& cfg) {
    if (!cfg.root.empty()) return cfg.root;
    if (const char* env = std::getenv("SPACE_CLIP_DATA_ROOT")) return env;
    return "";
}

struct LoadedData {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

inline LoadedData load_dataset(const DataConfig& cfg) {
    LoadedData out;
    if (cfg.synthetic) {
        auto all = synthetic_dataset(cfg.synthetic->n, cfg.synthetic->seed,
                                     cfg.synthetic->gt_keep);
        out.train = all;
        out.val = all;  // desk scale: validate on the training fixture
        out.test = std::move(all);
        return out;
    }
    const std::string root = resolve_data_root(cfg);
    SPACECLIP_CHECK(!root.empty(),
                    "no data root configured: set data.root or SPACE_CLIP_DATA_ROOT");
    SplitManifest manifest = load_split(root, cfg.train_split, cfg.test_split);
    for (const auto& [img, depth] : manifest.train_list)
        out.train.push_back(load_sample(img, depth));
    for (const auto& [img, depth] : manifest.test_list)
        out.test.push_back(load_sample(img, depth));
    // Tail holdout from the training list for model selection.
    if (!out.train.empty() && cfg.val_fraction > 0.0) {
        std::size_t n_val = static_cast<std::size_t>(
            static_cast<double>(out.train.size()) * cfg.val_fraction);
        if (n_val == 0) n_val = 1;
        if (n_val < out.train.size()) {
            out.val.assign(out.train.end() - static_cast<std::ptrdiff_t>(n_val),
                           out.train.end());
            out.train.resize(out.train.size() - n_val);
        } else {
            out.val = out.train;
        }
    }
    return out;
}

}  // namespace spaceclip
