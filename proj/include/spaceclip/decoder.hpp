#pragma once

// The Dense Predictor: a semantic pathway fed by deep hidden states (FiLM
// modulated), a structural pathway fed by shallow states (never modulated),
// hierarchical concat fusion with a 2x bilinear upsample per stage, and a
// scaled-logistic prediction head. All backbone levels live on the 14x14 token
// grid, so skips are bilinearly resized to each stage's working resolution;
// the stage schedule is 14 -> 28 -> 56 -> 112 -> 224 regardless of channel
// widths, and the head resizes to the configured output frame.

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "spaceclip/depth_map.hpp"
#include "spaceclip/encoder.hpp"
#include "spaceclip/film.hpp"
#include "spaceclip/nn.hpp"

namespace spaceclip {

struct ModelConfig {
    std::vector<int> semantic_indices{12, 9, 6, 3};  // coarsest stage first
    std::vector<int> structural_indices{2, 1, 0};
    std::vector<int> decoder_channels{256, 128, 64, 32};
    double dropout = 0.1;
    bool use_film = true;
    bool use_structural = true;
    double min_depth = 1e-3;
    double max_depth = 80.0;
    int output_rows = 352;
    int output_cols = 704;
    int film_hidden_width = 0;  // 0 -> backbone hidden_dim
    int head_width = 0;         // 3x3 head conv output channels; 0 -> last decoder width
    std::string input_mode = "center_crop";

    int num_stages() const { return static_cast<int>(semantic_indices.size()); }

    void validate() const {
        SPACECLIP_CHECK(semantic_indices.size() == decoder_channels.size(),
                        "semantic_indices (", semantic_indices.size(),
                        ") and decoder_channels (", decoder_channels.size(),
                        ") must have equal length");
        SPACECLIP_CHECK(structural_indices.size() + 1 == semantic_indices.size(),
                        "structural_indices must have one entry fewer than semantic_indices");
        SPACECLIP_CHECK(min_depth > 0.0 && min_depth < max_depth,
                        "require 0 < min_depth < max_depth, got [", min_depth, ", ",
                        max_depth, "]");
        SPACECLIP_CHECK(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1), got ",
                        dropout);
        SPACECLIP_CHECK(output_rows > 0 && output_cols > 0, "output size must be positive");
        for (int c : decoder_channels)
            SPACECLIP_CHECK(c > 0 && c % 8 == 0, "decoder channels must be positive multiples of 8, got ", c);
        crop_mode_from_string(input_mode);
    }

    /// Small configuration for fast CPU tests: narrow decoder, slim FiLM
    /// generators, no dropout.
    static ModelConfig desk_scale() {
        ModelConfig cfg;
        cfg.decoder_channels = {64, 32, 16, 8};
        cfg.film_hidden_width = 8;
        cfg.head_width = 32;
        cfg.dropout = 0.0;
        return cfg;
    }
};

/// Actual tensor shapes observed during one forward pass.
struct ForwardTrace {
    std::vector<std::pair<int, int>> stage_sizes;  // spatial size after each stage
    std::vector<int> stage_channels;
    std::pair<int, int> head_input{0, 0};
    std::pair<int, int> output{0, 0};
};

class SpaceClipModel {
  public:
    SpaceClipModel(std::shared_ptr<const Backbone> backbone, ModelConfig cfg,
                   std::uint64_t init_seed)
        : backbone_(std::move(backbone)),
          cfg_(std::move(cfg)),
          dropout_rng_(init_seed, "dropout") {
        cfg_.validate();
        const BackboneSpec& bs = backbone_->spec();
        for (int idx : cfg_.semantic_indices)
            SPACECLIP_CHECK(idx >= 0 && idx < bs.num_hidden_states,
                            "semantic index ", idx, " outside backbone range [0, ",
                            bs.num_hidden_states - 1, "]");
        for (int idx : cfg_.structural_indices)
            SPACECLIP_CHECK(idx >= 0 && idx < bs.num_hidden_states,
                            "structural index ", idx, " outside backbone range [0, ",
                            bs.num_hidden_states - 1, "]");

        const int d = bs.hidden_dim;
        const int stages = cfg_.num_stages();
        // Semantic-pathway modules draw from per-stage streams so that the
        // structural/film toggles cannot shift their initialization.
        for (int k = 0; k < stages; ++k) {
            Rng rng(init_seed, "decoder/stage" + std::to_string(k));
            const int ck = cfg_.decoder_channels[static_cast<std::size_t>(k)];
            const int prev_c = k == 0 ? 0 : cfg_.decoder_channels[static_cast<std::size_t>(k - 1)];
            const int fuse_in = ck + prev_c + ((k >= 1 && cfg_.use_structural) ? ck : 0);
            Stage s;
            s.sem_proj = Conv2d(d, ck, 1, rng);
            s.fuse = Conv2d(fuse_in, ck, 3, rng);
            s.sem_block = ResidualBlock(ck, cfg_.dropout, rng);
            stages_.push_back(std::move(s));
        }
        if (cfg_.use_structural) {
            for (int k = 1; k < stages; ++k) {
                Rng rng(init_seed, "structural/stage" + std::to_string(k));
                const int ck = cfg_.decoder_channels[static_cast<std::size_t>(k)];
                StructuralTap t;
                t.proj = Conv2d(d, ck, 1, rng);
                t.block = ResidualBlock(ck, cfg_.dropout, rng);
                structural_.push_back(std::move(t));
            }
        }
        if (cfg_.use_film) {
            Rng rng(init_seed, "film");
            FilmGeneratorConfig fc;
            fc.hidden_width = cfg_.film_hidden_width;
            fc.num_levels = stages;
            film_ = FilmGeneratorBank(d, fc, rng);
        }
        {
            Rng rng(init_seed, "head");
            const int last_c = cfg_.decoder_channels.back();
            const int hw = cfg_.head_width > 0 ? cfg_.head_width : last_c;
            head_conv_ = Conv2d(last_c, hw, 3, rng);
            head_out_ = Conv2d(hw, 1, 1, rng);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const Backbone& backbone() const { return *backbone_; }
    std::shared_ptr<const Backbone> backbone_ptr() const { return backbone_; }

    void set_train(bool training) { training_ = training; }
    bool training() const { return training_; }

    /// Differentiable batched forward: raw images -> (B, 1, out_rows, out_cols)
    /// metric depth.
    Tensor forward_batch(const std::vector<Image>& images, ForwardTrace* trace = nullptr) {
        SPACECLIP_CHECK(!images.empty(), "forward_batch: empty batch");
        const BackboneSpec& bs = backbone_->spec();
        const CropMode mode = crop_mode_from_string(cfg_.input_mode);
        std::set<int> wanted(cfg_.semantic_indices.begin(), cfg_.semantic_indices.end());
        if (cfg_.use_structural)
            wanted.insert(cfg_.structural_indices.begin(), cfg_.structural_indices.end());

        std::vector<FeatureBundle> bundles;
        bundles.reserve(images.size());
        for (const auto& img : images) {
            NoGradGuard ng;  // the backbone is frozen; keep it off the tape
            bundles.push_back(backbone_->extract_features(
                prepare_encoder_input(img, mode, bs), wanted));
        }
        return forward_features(bundles, trace);
    }

    /// Forward from pre-extracted features (used by the training loop to reuse
    /// cached frozen-backbone outputs).
    Tensor forward_features(const std::vector<FeatureBundle>& bundles,
                            ForwardTrace* trace = nullptr) {
        const int stages = cfg_.num_stages();
        const int gs = backbone_->spec().grid_side();
        const int batch = static_cast<int>(bundles.size());

        // Per-level semantic grids, FiLM modulated in backbone feature space.
        std::vector<Tensor> sem_grids;
        for (int level = 0; level < stages; ++level) {
            const int layer = cfg_.semantic_indices[static_cast<std::size_t>(level)];
            std::vector<Tensor> per_image;
            for (const auto& bundle : bundles) {
                Tensor tokens = tokens_from(bundle, layer);
                if (cfg_.use_film) {
                    Tensor cls = cls_from(bundle);
                    tokens = apply_film(tokens, film_->generate(cls, level));
                }
                per_image.push_back(tokens_to_grid(tokens, gs));
            }
            sem_grids.push_back(stack0(per_image));
        }
        std::vector<Tensor> struct_grids;
        if (cfg_.use_structural) {
            for (std::size_t t = 0; t < cfg_.structural_indices.size(); ++t) {
                const int layer = cfg_.structural_indices[t];
                std::vector<Tensor> per_image;
                for (const auto& bundle : bundles)
                    per_image.push_back(tokens_to_grid(tokens_from(bundle, layer), gs));
                struct_grids.push_back(stack0(per_image));
            }
        }

        if (trace) {
            trace->stage_sizes.clear();
            trace->stage_channels.clear();
        }
        Tensor x;
        for (int k = 0; k < stages; ++k) {
            x = run_stage(k, x, sem_grids[static_cast<std::size_t>(k)],
                          cfg_.use_structural && k >= 1
                              ? &struct_grids[static_cast<std::size_t>(k - 1)]
                              : nullptr);
            if (trace) {
                trace->stage_sizes.emplace_back(x.dim(2), x.dim(3));
                trace->stage_channels.push_back(x.dim(1));
            }
        }
        if (trace) trace->head_input = {x.dim(2), x.dim(3)};
        Tensor depth = prediction_head(x);
        if (trace) trace->output = {depth.dim(2), depth.dim(3)};
        SPACECLIP_CHECK(depth.dim(0) == batch, "batch size changed during forward");
        return depth;
    }

    /// One fusion stage: project (FiLM-modulated) semantic skip, refine and
    /// project the structural skip, fuse by channel concat + 3x3 conv, run the
    /// residual unit, upsample 2x. Stage 0 starts from the deepest skip alone.
    Tensor run_stage(int k, const Tensor& prev, const Tensor& sem_grid,
                     const Tensor* struct_grid) {
        SPACECLIP_CHECK(k >= 0 && k < cfg_.num_stages(), "stage ", k, " out of range");
        SPACECLIP_CHECK(k == 0 || prev.defined(),
                        "stage ", k + 1, ": missing decoder state from previous stage");
        Stage& s = stages_[static_cast<std::size_t>(k)];
        const int gs = backbone_->spec().grid_side();
        const int res = gs << k;  // working resolution entering stage k

        Tensor sem = s.sem_proj.forward(sem_grid);
        if (sem.dim(2) != res) sem = bilinear_resize(sem, res, res);

        std::vector<Tensor> parts;
        if (k > 0) parts.push_back(prev);
        parts.push_back(sem);
        if (k >= 1 && cfg_.use_structural) {
            SPACECLIP_CHECK(struct_grid != nullptr,
                            "stage ", k + 1, ": structural pathway enabled but no structural skip");
            StructuralTap& tap = structural_[static_cast<std::size_t>(k - 1)];
            Tensor st = tap.proj.forward(*struct_grid);
            st = tap.block.forward(st, dropout_rng_, training_);
            if (st.dim(2) != res) st = bilinear_resize(st, res, res);
            parts.push_back(st);
        }
        Tensor x = s.fuse.forward(concat_channels(parts));
        x = s.sem_block.forward(x, dropout_rng_, training_);
        return upsample2x(x);
    }

    /// 3x3 conv -> nonlinearity -> 1x1 conv -> logistic squash into
    /// [min_depth, max_depth] -> bilinear resize to the output frame.
    Tensor prediction_head(const Tensor& x) {
        SPACECLIP_CHECK(x.dim(1) == cfg_.decoder_channels.back(),
                        "prediction head expects ", cfg_.decoder_channels.back(),
                        " channels, got ", x.dim(1));
        Tensor h = silu(head_conv_.forward(x));
        Tensor logit = head_out_.forward(h);
        Tensor depth = add_scalar(
            mul_scalar(sigmoid(logit), cfg_.max_depth - cfg_.min_depth), cfg_.min_depth);
        if (depth.dim(2) != cfg_.output_rows || depth.dim(3) != cfg_.output_cols)
            depth = bilinear_resize(depth, cfg_.output_rows, cfg_.output_cols);
        return depth;
    }

    /// Inference: eval mode, no tape, all-true validity mask.
    DepthMap predict(const Image& image) { return predict_batch({image}).front(); }

    std::vector<DepthMap> predict_batch(const std::vector<Image>& images) {
        NoGradGuard ng;
        const bool was_training = training_;
        training_ = false;
        Tensor out = forward_batch(images);
        training_ = was_training;
        std::vector<DepthMap> maps;
        const std::size_t plane =
            static_cast<std::size_t>(cfg_.output_rows) * cfg_.output_cols;
        for (std::size_t b = 0; b < images.size(); ++b) {
            DepthMap m(cfg_.output_rows, cfg_.output_cols);
            std::copy(out.data() + b * plane, out.data() + (b + 1) * plane,
                      m.values.begin());
            maps.push_back(std::move(m));
        }
        return maps;
    }

    ParamList named_parameters() {
        ParamList out;
        for (std::size_t k = 0; k < stages_.size(); ++k) {
            const std::string p = "decoder.stage" + std::to_string(k);
            stages_[k].sem_proj.collect(p + ".sem_proj", out);
            stages_[k].fuse.collect(p + ".fuse", out);
            stages_[k].sem_block.collect(p + ".sem_block", out);
        }
        for (std::size_t t = 0; t < structural_.size(); ++t) {
            const std::string p = "structural.stage" + std::to_string(t + 1);
            structural_[t].proj.collect(p + ".proj", out);
            structural_[t].block.collect(p + ".block", out);
        }
        if (film_) film_->collect("film", out);
        head_conv_.collect("head.conv", out);
        head_out_.collect("head.out", out);
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (auto& p : named_parameters()) n += p.tensor.numel();
        return n;
    }

    void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed, "dropout"); }
    Rng& dropout_rng() { return dropout_rng_; }

    /// Direct access to the semantic residual unit of a stage (tests exercise
    /// the block contract through this).
    ResidualBlock& semantic_block(int stage) { return stages_[static_cast<std::size_t>(stage)].sem_block; }
    ResidualBlock& structural_block(int tap) { return structural_[static_cast<std::size_t>(tap)].block; }
    Conv2d& head_output_conv() { return head_out_; }
    const FilmGeneratorBank* film_bank() const { return film_ ? &*film_ : nullptr; }

  private:
    Tensor tokens_from(const FeatureBundle& bundle, int layer) const {
        auto it = bundle.states.find(layer);
        SPACECLIP_CHECK(it != bundle.states.end(), "feature bundle missing layer ", layer);
        const Mat& m = it->second;
        std::vector<double> v(m.data(), m.data() + m.size());
        return Tensor::from_vector({static_cast<int>(m.rows()), static_cast<int>(m.cols())},
                                   std::move(v));
    }

    Tensor cls_from(const FeatureBundle& bundle) const {
        const Vec& v = bundle.cls_vector;
        return Tensor::from_vector({static_cast<int>(v.size())},
                                   std::vector<double>(v.data(), v.data() + v.size()));
    }

    struct Stage {
        Conv2d sem_proj;
        Conv2d fuse;
        ResidualBlock sem_block;
    };
    struct StructuralTap {
        Conv2d proj;
        ResidualBlock block;
    };

    std::shared_ptr<const Backbone> backbone_;
    ModelConfig cfg_;
    std::vector<Stage> stages_;
    std::vector<StructuralTap> structural_;
    std::optional<FilmGeneratorBank> film_;
    Conv2d head_conv_, head_out_;
    Rng dropout_rng_;
    bool training_ = false;
};

}  // namespace spaceclip
