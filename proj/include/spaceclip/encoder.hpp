#pragma once

// Frozen feature extraction. A backbone exposes the per-layer hidden states of
// a vision transformer as plain matrices (no autodiff tape; nothing upstream
// of the decoder ever receives gradients). StubBackbone is a seeded random
// transformer stand-in with the same shape contract at hidden width 64, used
// by the desk-scale tests.

#include <Eigen/Core>

#include <array>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "spaceclip/common.hpp"
#include "spaceclip/image.hpp"

namespace spaceclip {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct BackboneSpec {
    std::string model_id = "openai/clip-vit-base-patch16";
    int patch_size = 16;
    int input_side = 224;
    int hidden_dim = 768;
    int num_hidden_states = 13;  // index 0 = patch embedding, 1..12 = layers
    int num_attention_heads = 12;
    int mlp_ratio = 4;
    // Published normalization for the default checkpoint.
    std::array<double, 3> image_mean{0.48145466, 0.4578275, 0.40821073};
    std::array<double, 3> image_std{0.26862954, 0.26130258, 0.27577711};

    int grid_side() const { return input_side / patch_size; }
    int num_patches() const { return grid_side() * grid_side(); }

    void validate() const {
        SPACECLIP_CHECK(input_side % patch_size == 0, "input side ", input_side,
                        " not divisible by patch size ", patch_size);
        SPACECLIP_CHECK(num_hidden_states >= 1, "need at least one hidden state");
        SPACECLIP_CHECK(hidden_dim > 0 && patch_size > 0 && input_side > 0,
                        "backbone dimensions must be positive");
    }
};

/// Per-image hidden states (class token stripped) plus the final-layer class
/// vector.
struct FeatureBundle {
    std::map<int, Mat> states;  // layer index -> (num_patches, hidden_dim)
    Vec cls_vector;
    int grid_side = 0;
};

enum class CropMode { center_crop, resize };

inline CropMode crop_mode_from_string(const std::string& s) {
    if (s == "center_crop") return CropMode::center_crop;
    if (s == "resize") return CropMode::resize;
    throw Error("unknown encoder input mode: " + s + " (expected center_crop or resize)");
}

inline std::string to_string(CropMode m) {
    return m == CropMode::center_crop ? "center_crop" : "resize";
}

/// Crop or resample to the backbone input size and apply the checkpoint's
/// channel normalization.
inline Image prepare_encoder_input(const Image& img, CropMode mode,
                                   const BackboneSpec& spec) {
    const int side = spec.input_side;
    Image window;
    if (mode == CropMode::center_crop) {
        SPACECLIP_CHECK(img.rows >= side, "center_crop requires height >= ", side,
                        ", got height ", img.rows);
        SPACECLIP_CHECK(img.cols >= side, "center_crop requires width >= ", side,
                        ", got width ", img.cols);
        const int r0 = (img.rows - side) / 2;
        const int c0 = (img.cols - side) / 2;
        window = Image(side, side);
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c)
                for (int ch = 0; ch < 3; ++ch)
                    window.at(r, c, ch) = img.at(r0 + r, c0 + c, ch);
    } else {
        window = resize_image_bilinear(img, side, side);
    }
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c)
            for (int ch = 0; ch < 3; ++ch)
                window.at(r, c, ch) =
                    (window.at(r, c, ch) - spec.image_mean[static_cast<std::size_t>(ch)]) /
                    spec.image_std[static_cast<std::size_t>(ch)];
    return window;
}

class Backbone {
  public:
    virtual ~Backbone() = default;
    virtual const BackboneSpec& spec() const = 0;
    /// Pure function of (weights, input, indices); reentrant.
    virtual FeatureBundle extract_features(const Image& prepared,
                                           const std::set<int>& indices) const = 0;
    /// Fingerprint of every weight buffer; unchanged across training runs.
    virtual std::uint64_t weights_fingerprint() const = 0;

  protected:
    void check_indices(const std::set<int>& indices) const {
        for (int idx : indices) {
            SPACECLIP_CHECK(idx >= 0 && idx < spec().num_hidden_states,
                            "hidden state index ", idx, " out of range; valid range is [0, ",
                            spec().num_hidden_states - 1, "]");
        }
    }
};

namespace detail {

inline Mat seeded_matrix(Rng& rng, int rows, int cols, double scale) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.normal() * scale;
    return m;
}

/// Flatten prepared HWC input into (num_patches, patch_size^2 * 3) rows in
/// row-major patch order, pixels ordered (ky, kx, channel).
inline Mat patchify(const Image& img, int patch) {
    const int gs = img.rows / patch;
    Mat out(gs * gs, patch * patch * 3);
    for (int py = 0; py < gs; ++py) {
        for (int px = 0; px < gs; ++px) {
            int col = 0;
            for (int ky = 0; ky < patch; ++ky)
                for (int kx = 0; kx < patch; ++kx)
                    for (int ch = 0; ch < 3; ++ch)
                        out(py * gs + px, col++) = img.at(py * patch + ky, px * patch + kx, ch);
        }
    }
    return out;
}

}  // namespace detail

/// Deterministic frozen stand-in: a seeded random patch embedding followed by
/// fixed residual mixing layers (channel mixing plus a 3x3 token box blur on
/// the patch grid, added back to a per-token-normalized residual stream, the
/// way transformer hidden states carry their inputs forward). Same seed, same
/// outputs, forever.
class StubBackbone : public Backbone {
  public:
    explicit StubBackbone(std::uint64_t seed, int hidden_dim = 64)
        : seed_(seed) {
        spec_.model_id = "stub";
        spec_.hidden_dim = hidden_dim;
        spec_.num_attention_heads = 1;
        spec_.validate();
        Rng rng(seed, "stub-backbone");
        const int d = spec_.hidden_dim;
        const int p = spec_.patch_size * spec_.patch_size * 3;
        embed_ = detail::seeded_matrix(rng, p, d, 1.0 / std::sqrt(static_cast<double>(p)));
        pos_ = detail::seeded_matrix(rng, spec_.num_patches(), d, 0.3);
        const int layers = spec_.num_hidden_states - 1;
        for (int l = 0; l < layers; ++l) {
            mix_.push_back(detail::seeded_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d))));
            blur_mix_.push_back(
                detail::seeded_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d))));
        }
        cls_head_ = detail::seeded_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d)));
    }

    const BackboneSpec& spec() const override { return spec_; }
    std::uint64_t seed() const { return seed_; }

    FeatureBundle extract_features(const Image& prepared,
                                   const std::set<int>& indices) const override {
        SPACECLIP_CHECK(prepared.rows == spec_.input_side && prepared.cols == spec_.input_side,
                        "expected prepared ", spec_.input_side, "x", spec_.input_side,
                        " input, got ", prepared.rows, "x", prepared.cols);
        check_indices(indices);
        const int gs = spec_.grid_side();
        Mat state = rms_normalize(detail::patchify(prepared, spec_.patch_size) * embed_ + pos_);
        FeatureBundle out;
        out.grid_side = gs;
        if (indices.count(0)) out.states[0] = state;
        for (std::size_t l = 0; l < mix_.size(); ++l) {
            Mat update =
                (state * mix_[l] + box_blur(state, gs) * blur_mix_[l]).array().tanh().matrix();
            state = rms_normalize(state + 0.5 * update);
            const int idx = static_cast<int>(l) + 1;
            if (indices.count(idx)) out.states[idx] = state;
        }
        Vec pooled = state.colwise().mean().transpose();
        out.cls_vector = (cls_head_ * pooled).array().tanh().matrix();
        return out;
    }

    std::uint64_t weights_fingerprint() const override {
        std::uint64_t h = 14695981039346656037ull;
        auto fold = [&h](const Mat& m) {
            h = fnv1a64(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
        };
        fold(embed_);
        fold(pos_);
        for (const auto& m : mix_) fold(m);
        for (const auto& m : blur_mix_) fold(m);
        fold(cls_head_);
        return h;
    }

  private:
    static Mat rms_normalize(const Mat& tokens) {
        Mat out = tokens;
        for (int r = 0; r < out.rows(); ++r) {
            const double rms =
                std::sqrt(out.row(r).squaredNorm() / static_cast<double>(out.cols()) + 1e-8);
            out.row(r) /= rms;
        }
        return out;
    }

    static Mat box_blur(const Mat& tokens, int gs) {
        Mat out(tokens.rows(), tokens.cols());
        for (int r = 0; r < gs; ++r) {
            for (int c = 0; c < gs; ++c) {
                Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(tokens.cols());
                int n = 0;
                for (int dr = -1; dr <= 1; ++dr) {
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= gs || cc < 0 || cc >= gs) continue;
                        acc += tokens.row(rr * gs + cc);
                        ++n;
                    }
                }
                out.row(r * gs + c) = acc / n;
            }
        }
        return out;
    }

    BackboneSpec spec_;
    std::uint64_t seed_;
    Mat embed_, pos_, cls_head_;
    std::vector<Mat> mix_, blur_mix_;
};

}  // namespace spaceclip
