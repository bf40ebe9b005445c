#pragma once

// Optimization loop: decoupled-weight-decay Adam over the decoder and FiLM
// parameters only, step-decay schedule applied at epoch boundaries, global
// gradient-norm clipping, seeded shuffling/augmentation, per-epoch validation
// on abs_rel, and binary checkpoints that never contain backbone weights.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spaceclip/data.hpp"
#include "spaceclip/decoder.hpp"
#include "spaceclip/losses.hpp"
#include "spaceclip/metrics.hpp"
#include "spaceclip/serialize.hpp"

namespace spaceclip {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 0.01;
    int scheduler_step_epochs = 2;
    double scheduler_gamma = 0.5;
    int epochs = 10;
    int batch_size = 64;
    std::uint64_t seed = 42;
    double clip_norm = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    LossConfig loss;

    void validate() const {
        SPACECLIP_CHECK(lr > 0 && weight_decay >= 0 && scheduler_step_epochs > 0 &&
                            scheduler_gamma > 0 && epochs > 0 && batch_size > 0 &&
                            clip_norm > 0,
                        "train config fields must be positive");
        loss.validate();
    }
};

inline json to_json(const TrainConfig& c) {
    return json{{"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"scheduler_step_epochs", c.scheduler_step_epochs},
                {"scheduler_gamma", c.scheduler_gamma},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"clip_norm", c.clip_norm},
                {"adam_beta1", c.adam_beta1},
                {"adam_beta2", c.adam_beta2},
                {"adam_eps", c.adam_eps},
                {"loss", to_json(c.loss)}};
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    detail::get_field(j, "lr", c.lr);
    detail::get_field(j, "weight_decay", c.weight_decay);
    detail::get_field(j, "scheduler_step_epochs", c.scheduler_step_epochs);
    detail::get_field(j, "scheduler_gamma", c.scheduler_gamma);
    detail::get_field(j, "epochs", c.epochs);
    detail::get_field(j, "batch_size", c.batch_size);
    detail::get_field(j, "seed", c.seed);
    detail::get_field(j, "clip_norm", c.clip_norm);
    detail::get_field(j, "adam_beta1", c.adam_beta1);
    detail::get_field(j, "adam_beta2", c.adam_beta2);
    detail::get_field(j, "adam_eps", c.adam_eps);
    if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
    return c;
}

// ---------------------------------------------------------------------------
// Optimizer & schedule
// ---------------------------------------------------------------------------

class AdamW {
  public:
    AdamW(ParamList params, const TrainConfig& cfg)
        : params_(std::move(params)),
          lr_(cfg.lr),
          weight_decay_(cfg.weight_decay),
          beta1_(cfg.adam_beta1),
          beta2_(cfg.adam_beta2),
          eps_(cfg.adam_eps) {
        SPACECLIP_CHECK(!params_.empty(), "optimizer constructed with an empty parameter set");
        for (auto& p : params_) {
            m_.emplace_back(p.tensor.numel(), 0.0);
            v_.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    const ParamList& params() const { return params_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].tensor;
            if (p.grad().empty()) continue;
            double* w = p.data();
            const double* g = p.grad().data();
            double* m = m_[i].data();
            double* v = v_[i].data();
            const double decay = params_[i].decay ? weight_decay_ : 0.0;
            for (std::int64_t k = 0; k < p.numel(); ++k) {
                if (decay != 0.0) w[k] -= lr_ * decay * w[k];
                m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
                v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                w[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

  private:
    ParamList params_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

inline AdamW make_optimizer(ParamList params, const TrainConfig& cfg) {
    return AdamW(std::move(params), cfg);
}

/// lr(epoch) = base * gamma^floor(epoch / step_epochs)
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    return cfg.lr * std::pow(cfg.scheduler_gamma, epoch / cfg.scheduler_step_epochs);
}

class StepLr {
  public:
    StepLr(AdamW& opt, const TrainConfig& cfg) : opt_(opt), cfg_(cfg) {
        opt_.set_lr(lr_at_epoch(cfg_, 0));
    }
    /// Apply the rate for `epoch` at its boundary.
    void step_to_epoch(int epoch) { opt_.set_lr(lr_at_epoch(cfg_, epoch)); }

  private:
    AdamW& opt_;
    TrainConfig cfg_;
};

inline StepLr make_scheduler(AdamW& opt, const TrainConfig& cfg) { return StepLr(opt, cfg); }

/// Scale gradients so the global norm is at most max_norm; returns the
/// pre-clip norm.
inline double clip_grad_norm(ParamList& params, double max_norm) {
    double total_sq = 0.0;
    for (auto& p : params)
        for (double g : p.tensor.grad()) total_sq += g * g;
    const double total = std::sqrt(total_sq);
    if (total > max_norm) {
        const double scale = max_norm / (total + 1e-6);
        for (auto& p : params) {
            if (p.tensor.grad().empty()) continue;
            double* g = p.tensor.grad_data();
            for (std::int64_t k = 0; k < p.tensor.numel(); ++k) g[k] *= scale;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    std::map<std::string, std::pair<Shape, std::vector<double>>> arrays;
    json model_config;
    json train_config;
    json backbone;  // descriptor only; never weights
    int epoch = 0;
    double best_abs_rel = 0.0;
    std::string rng_state;
};

inline void save_checkpoint(const std::string& path, SpaceClipModel& model,
                            const TrainConfig& train_cfg, const json& backbone_desc,
                            int epoch, double best_abs_rel,
                            const std::string& rng_state) {
    json manifest;
    manifest["format"] = "spaceclip-checkpoint";
    manifest["version"] = 1;
    manifest["model_config"] = to_json(model.config());
    manifest["train_config"] = to_json(train_cfg);
    manifest["backbone"] = backbone_desc;
    manifest["epoch"] = epoch;
    manifest["best_abs_rel"] = best_abs_rel;
    manifest["rng_state"] = rng_state;

    auto params = model.named_parameters();
    json arrays = json::array();
    std::uint64_t offset = 0;
    for (auto& p : params) {
        SPACECLIP_CHECK(p.name.rfind("backbone", 0) != 0,
                        "frozen contract violation: refusing to checkpoint ", p.name);
        json a;
        a["name"] = p.name;
        a["shape"] = p.tensor.shape();
        a["offset"] = offset;
        a["bytes"] = static_cast<std::uint64_t>(p.tensor.numel()) * 8;
        a["fnv64"] = detail::format_msg(std::hex,
                                        fnv1a64(p.tensor.data(),
                                                static_cast<std::size_t>(p.tensor.numel()) * 8));
        arrays.push_back(a);
        offset += static_cast<std::uint64_t>(p.tensor.numel()) * 8;
    }
    manifest["arrays"] = arrays;

    const std::string mstr = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    SPACECLIP_CHECK(out, "cannot write checkpoint: ", path);
    out.write("SPCK", 4);
    const std::uint64_t mlen = mstr.size();
    out.write(reinterpret_cast<const char*>(&mlen), 8);
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (auto& p : params)
        out.write(reinterpret_cast<const char*>(p.tensor.data()),
                  static_cast<std::streamsize>(p.tensor.numel()) * 8);
    SPACECLIP_CHECK(out.good(), "checkpoint write failed: ", path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    SPACECLIP_CHECK(in, "cannot open checkpoint: ", path);
    char magic[4];
    in.read(magic, 4);
    SPACECLIP_CHECK(in && std::memcmp(magic, "SPCK", 4) == 0, "not a checkpoint file: ", path);
    std::uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), 8);
    std::string mstr(mlen, '\0');
    in.read(mstr.data(), static_cast<std::streamsize>(mlen));
    SPACECLIP_CHECK(in, "truncated checkpoint manifest: ", path);
    json manifest = json::parse(mstr);

    Checkpoint ck;
    ck.model_config = manifest.at("model_config");
    ck.train_config = manifest.at("train_config");
    ck.backbone = manifest.value("backbone", json::object());
    ck.epoch = manifest.at("epoch").get<int>();
    ck.best_abs_rel = manifest.at("best_abs_rel").get<double>();
    ck.rng_state = manifest.value("rng_state", "");
    const std::uint64_t data_begin = 4 + 8 + mlen;
    for (const auto& a : manifest.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        Shape shape = a.at("shape").get<Shape>();
        const std::uint64_t bytes = a.at("bytes").get<std::uint64_t>();
        std::vector<double> data(bytes / 8);
        in.seekg(static_cast<std::streamoff>(data_begin + a.at("offset").get<std::uint64_t>()));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
        SPACECLIP_CHECK(in, "truncated checkpoint array '", name, "' in ", path);
        const std::string want = a.at("fnv64").get<std::string>();
        const std::string got = detail::format_msg(std::hex, fnv1a64(data.data(), bytes));
        SPACECLIP_CHECK(want == got, "integrity check failed for array '", name, "' in ",
                        path);
        ck.arrays[name] = {std::move(shape), std::move(data)};
    }
    return ck;
}

inline void load_parameters(SpaceClipModel& model, const Checkpoint& ck) {
    auto params = model.named_parameters();
    SPACECLIP_CHECK(params.size() == ck.arrays.size(),
                    "checkpoint/config incompatibility: model has ", params.size(),
                    " parameter tensors, checkpoint has ", ck.arrays.size());
    for (auto& p : params) {
        auto it = ck.arrays.find(p.name);
        SPACECLIP_CHECK(it != ck.arrays.end(),
                        "checkpoint/config incompatibility: missing array ", p.name);
        SPACECLIP_CHECK(it->second.first == p.tensor.shape(),
                        "checkpoint/config incompatibility: array ", p.name, " has shape ",
                        shape_str(it->second.first), ", model expects ",
                        shape_str(p.tensor.shape()));
        std::copy(it->second.second.begin(), it->second.second.end(), p.tensor.data());
    }
}

// ---------------------------------------------------------------------------
// Steps and epochs
// ---------------------------------------------------------------------------

struct StepRecord {
    int step = 0;
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double silog = 0.0;
    double ssim = 0.0;
    double grad_norm_pre_clip = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
    double mean_silog = 0.0;
    double mean_ssim = 0.0;
    double val_abs_rel = 0.0;
};

/// Features for a batch are extracted once per distinct image; augmentation
/// changes pixels, so caching only applies when augmentation is off.
class FeatureCache {
  public:
    explicit FeatureCache(bool enabled) : enabled_(enabled) {}

    FeatureBundle features(const SpaceClipModel& model, const Sample& s) {
        const ModelConfig& mc = model.config();
        std::set<int> wanted(mc.semantic_indices.begin(), mc.semantic_indices.end());
        if (mc.use_structural)
            wanted.insert(mc.structural_indices.begin(), mc.structural_indices.end());
        const Backbone& bb = model.backbone();
        if (!enabled_) {
            return bb.extract_features(
                prepare_encoder_input(s.image, crop_mode_from_string(mc.input_mode), bb.spec()),
                wanted);
        }
        auto it = cache_.find(s.source_id);
        if (it != cache_.end()) return it->second;
        auto fb = bb.extract_features(
            prepare_encoder_input(s.image, crop_mode_from_string(mc.input_mode), bb.spec()),
            wanted);
        if (cache_.size() < kMaxEntries) cache_[s.source_id] = fb;
        return fb;
    }

  private:
    static constexpr std::size_t kMaxEntries = 512;  // bounded for large datasets
    bool enabled_;
    std::map<std::string, FeatureBundle> cache_;
};

/// Ground truth at the model's output resolution (nearest, mask preserved).
inline DepthMap gt_for_loss(const DepthMap& gt, const ModelConfig& cfg) {
    return resize_depth_nearest(gt, cfg.output_rows, cfg.output_cols);
}

/// forward -> loss -> backward -> global-norm clip -> optimizer step -> zero.
inline StepRecord train_step(SpaceClipModel& model, const std::vector<Sample>& batch,
                             AdamW& opt, const TrainConfig& cfg,
                             FeatureCache* cache = nullptr) {
    SPACECLIP_CHECK(!batch.empty(), "train_step: empty batch");
    model.set_train(true);
    Tensor pred;
    if (cache) {
        std::vector<FeatureBundle> bundles;
        for (const auto& s : batch) bundles.push_back(cache->features(model, s));
        pred = model.forward_features(bundles);
    } else {
        std::vector<Image> images;
        for (const auto& s : batch) images.push_back(s.image);
        pred = model.forward_batch(images);
    }
    auto batch_ids = [&batch] {
        std::string ids;
        for (const auto& s : batch) ids += (ids.empty() ? "" : ", ") + s.source_id;
        return ids;
    };
    for (double v : pred.values())
        if (!std::isfinite(v))
            throw Error("non-finite prediction; aborting. batch ids: " + batch_ids());
    std::vector<DepthMap> gts;
    for (const auto& s : batch) gts.push_back(gt_for_loss(s.gt, model.config()));
    LossBreakdown loss = total_loss(pred, gts, cfg.loss);
    if (!std::isfinite(loss.total.item()))
        throw Error("non-finite loss; aborting. batch ids: " + batch_ids());
    loss.total.backward();
    auto params = opt.params();
    StepRecord rec;
    rec.grad_norm_pre_clip = clip_grad_norm(params, cfg.clip_norm);
    opt.step();
    opt.zero_grad();
    rec.lr = opt.lr();
    rec.loss = loss.total.item();
    rec.silog = loss.silog.item();
    rec.ssim = loss.ssim.item();
    return rec;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitOptions {
    std::string out_dir;             // empty -> no checkpoints written
    std::ostream* run_log = nullptr; // JSONL, one record per step
    bool augment = true;
    json backbone_desc = json::object();
    std::string resume_from;         // optional checkpoint to resume
    std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
    std::vector<EpochRecord> history;
    std::vector<StepRecord> steps;
    double best_abs_rel = 0.0;
    int best_epoch = -1;
    std::string best_checkpoint_path;
};

inline MetricsReport evaluate_model(SpaceClipModel& model, const std::vector<Sample>& data,
                                    const EvalProtocol& protocol) {
    SPACECLIP_CHECK(!data.empty(), "evaluate_model: empty dataset");
    std::vector<MetricsReport> reports;
    for (const auto& s : data) {
        DepthMap pred = model.predict(s.image);
        reports.push_back(
            compute_metrics(pred, gt_for_loss(s.gt, model.config()), protocol));
    }
    return aggregate_reports(reports);
}

inline FitResult fit(SpaceClipModel& model, const std::vector<Sample>& train_data,
                     const std::vector<Sample>& val_data, const TrainConfig& cfg,
                     const FitOptions& opts = {}) {
    SPACECLIP_CHECK(!train_data.empty(), "fit: empty training set");
    cfg.validate();
    AdamW opt = make_optimizer(model.named_parameters(), cfg);
    StepLr scheduler = make_scheduler(opt, cfg);
    Rng order_rng(cfg.seed, "data-order");
    Rng aug_rng(cfg.seed, "augment");
    model.reseed_dropout(cfg.seed);
    int start_epoch = 0;

    if (!opts.resume_from.empty()) {
        Checkpoint ck = load_checkpoint(opts.resume_from);
        load_parameters(model, ck);
        start_epoch = ck.epoch + 1;
        if (!ck.rng_state.empty()) {
            json st = json::parse(ck.rng_state);
            order_rng.restore(st.at("data_order").get<std::string>());
            aug_rng.restore(st.at("augment").get<std::string>());
            model.dropout_rng().restore(st.at("dropout").get<std::string>());
        }
    }

    FeatureCache cache(!opts.augment);
    FitResult result;
    result.best_abs_rel = std::numeric_limits<double>::infinity();
    EvalProtocol val_protocol;
    val_protocol.cap_min = model.config().min_depth;
    val_protocol.cap_max = model.config().max_depth;
    val_protocol.crop = EvalCrop::none;
    val_protocol.split = "validation";

    int global_step = 0;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        scheduler.step_to_epoch(epoch);
        std::vector<std::size_t> idx(train_data.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        order_rng.shuffle(idx);

        double sum_loss = 0, sum_silog = 0, sum_ssim = 0;
        int steps_in_epoch = 0;
        for (std::size_t pos = 0; pos < idx.size(); pos += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<Sample> batch;
            for (std::size_t b = pos;
                 b < std::min(idx.size(), pos + static_cast<std::size_t>(cfg.batch_size)); ++b) {
                const Sample& s = train_data[idx[b]];
                batch.push_back(opts.augment ? augment(s, aug_rng) : s);
            }
            StepRecord rec = train_step(model, batch, opt, cfg, opts.augment ? nullptr : &cache);
            rec.step = global_step++;
            rec.epoch = epoch;
            sum_loss += rec.loss;
            sum_silog += rec.silog;
            sum_ssim += rec.ssim;
            ++steps_in_epoch;
            if (opts.run_log) {
                json line{{"step", rec.step},         {"epoch", rec.epoch},
                          {"lr", rec.lr},             {"loss", rec.loss},
                          {"silog", rec.silog},       {"ssim", rec.ssim},
                          {"grad_norm", rec.grad_norm_pre_clip}};
                (*opts.run_log) << line.dump() << "\n";
                opts.run_log->flush();
            }
            result.steps.push_back(rec);
        }

        EpochRecord er;
        er.epoch = epoch;
        er.lr = opt.lr();
        er.mean_loss = sum_loss / steps_in_epoch;
        er.mean_silog = sum_silog / steps_in_epoch;
        er.mean_ssim = sum_ssim / steps_in_epoch;
        if (!val_data.empty()) {
            er.val_abs_rel = evaluate_model(model, val_data, val_protocol).abs_rel;
            if (er.val_abs_rel < result.best_abs_rel) {
                result.best_abs_rel = er.val_abs_rel;
                result.best_epoch = epoch;
                if (!opts.out_dir.empty()) {
                    std::filesystem::create_directories(opts.out_dir);
                    result.best_checkpoint_path =
                        (std::filesystem::path(opts.out_dir) / "checkpoint_best.spck").string();
                    json rng_state{{"data_order", order_rng.serialize()},
                                   {"augment", aug_rng.serialize()},
                                   {"dropout", model.dropout_rng().serialize()}};
                    save_checkpoint(result.best_checkpoint_path, model, cfg,
                                    opts.backbone_desc, epoch, er.val_abs_rel,
                                    rng_state.dump());
                }
            }
        }
        result.history.push_back(er);
        if (opts.on_epoch) opts.on_epoch(er);
    }
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        json rng_state{{"data_order", order_rng.serialize()},
                       {"augment", aug_rng.serialize()},
                       {"dropout", model.dropout_rng().serialize()}};
        save_checkpoint((std::filesystem::path(opts.out_dir) / "checkpoint_last.spck").string(),
                        model, cfg, opts.backbone_desc, cfg.epochs - 1,
                        result.best_abs_rel, rng_state.dump());
    }
    return result;
}

}  // namespace spaceclip
