#pragma once

// Training objective: a scale-invariant logarithmic term plus a structural
// similarity term, combined as (1 - lambda) * silog + lambda * ssim. Both are
// mask-aware: SILog reduces over valid ground-truth pixels only, and SSIM sees
// invalid pixels replaced by gradient-detached prediction values so they
// contribute similarity 1 and zero loss. Batched inputs are reduced per image
// and then averaged.

#include <string>
#include <vector>

#include "spaceclip/depth_map.hpp"
#include "spaceclip/nn.hpp"
#include "spaceclip/tensor.hpp"

namespace spaceclip {

struct LossConfig {
    double lambda_ssim = 0.5;
    double silog_lambda = 0.85;  // variance focus term
    double silog_alpha = 10.0;   // scale factor
    int ssim_window = 11;
    double ssim_sigma = 1.5;
    double min_depth = 1e-3;
    double max_depth = 80.0;
    double ssim_c1 = 0.64;  // (0.01 * max_depth)^2
    double ssim_c2 = 5.76;  // (0.03 * max_depth)^2

    void validate() const {
        SPACECLIP_CHECK(lambda_ssim >= 0.0 && lambda_ssim <= 1.0,
                        "lambda_ssim must be in [0, 1], got ", lambda_ssim);
        SPACECLIP_CHECK(silog_lambda >= 0.0 && silog_lambda <= 1.0,
                        "silog variance focus must be in [0, 1], got ", silog_lambda);
        SPACECLIP_CHECK(ssim_window >= 3 && ssim_window % 2 == 1,
                        "ssim window must be odd and >= 3, got ", ssim_window);
        SPACECLIP_CHECK(ssim_c1 > 0.0 && ssim_c2 > 0.0, "ssim constants must be positive");
    }
};

namespace detail {

struct LossMask {
    std::vector<double> keep;  // 1 where supervised
    std::int64_t count = 0;
};

inline LossMask loss_mask(const DepthMap& gt, const LossConfig& cfg) {
    LossMask m;
    m.keep.assign(gt.values.size(), 0.0);
    for (std::size_t i = 0; i < gt.values.size(); ++i) {
        if (gt.valid[i] && gt.values[i] >= cfg.min_depth && gt.values[i] <= cfg.max_depth) {
            m.keep[i] = 1.0;
            ++m.count;
        }
    }
    return m;
}

inline void check_pred_map(const Tensor& pred, const DepthMap& gt, const char* op) {
    SPACECLIP_CHECK(pred.ndim() == 2, op, ": prediction must be a 2-d map");
    SPACECLIP_CHECK(pred.dim(0) == gt.rows && pred.dim(1) == gt.cols, op,
                    ": prediction ", pred.dim(0), "x", pred.dim(1),
                    " does not match ground truth ", gt.rows, "x", gt.cols);
}

inline Tensor image_slice(const Tensor& batch, int b) {
    const int h = batch.dim(2), w = batch.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> v(batch.data() + static_cast<std::size_t>(b) * plane,
                          batch.data() + static_cast<std::size_t>(b + 1) * plane);
    auto bn = batch.node();
    return make_op({h, w}, std::move(v), {Tensor(batch.node())},
                   [bn, b, plane](TensorNode& out) {
        if (!bn->requires_grad) return;
        bn->ensure_grad();
        double* dst = bn->grad.data() + static_cast<std::size_t>(b) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += out.grad[i];
    });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SILog
// ---------------------------------------------------------------------------

/// alpha * sqrt( mean(g^2) - lambda * mean(g)^2 ) over valid pixels, with
/// g = log(pred) - log(gt). Invariant under joint rescaling of pred and gt.
inline Tensor silog_loss(const Tensor& pred, const DepthMap& gt, const LossConfig& cfg) {
    detail::check_pred_map(pred, gt, "silog_loss");
    const auto mask = detail::loss_mask(gt, cfg);
    SPACECLIP_CHECK(mask.count >= 2, "silog_loss: need at least 2 valid pixels, found ",
                    mask.count);
    for (std::size_t i = 0; i < mask.keep.size(); ++i) {
        if (mask.keep[i] == 0.0) continue;
        SPACECLIP_CHECK(pred.values()[i] > 0.0,
                        "silog_loss: nonpositive prediction inside the valid mask");
        SPACECLIP_CHECK(gt.values[i] > 0.0,
                        "silog_loss: nonpositive ground truth inside the valid mask");
    }
    const double n = static_cast<double>(mask.count);
    const int h = gt.rows, w = gt.cols;
    Tensor keep = Tensor::from_vector({h, w}, mask.keep);
    // log(pred) evaluated safely everywhere: masked-out pixels see log(1) = 0.
    Tensor pred_safe = add(mul(pred, keep),
                           Tensor::from_vector({h, w}, [&] {
                               std::vector<double> inv(mask.keep.size());
                               for (std::size_t i = 0; i < inv.size(); ++i)
                                   inv[i] = 1.0 - mask.keep[i];
                               return inv;
                           }()));
    std::vector<double> log_gt(gt.values.size(), 0.0);
    for (std::size_t i = 0; i < log_gt.size(); ++i)
        if (mask.keep[i] != 0.0) log_gt[i] = std::log(gt.values[i]);
    Tensor g = mul(sub(log(pred_safe), Tensor::from_vector({h, w}, std::move(log_gt))), keep);
    Tensor sum_sq = sum(mul(g, g));
    Tensor total = sum(g);
    Tensor radicand = sub(mul_scalar(sum_sq, 1.0 / n),
                          mul_scalar(mul(total, total), cfg.silog_lambda / (n * n)));
    return mul_scalar(sqrt_clamped(radicand), cfg.silog_alpha);
}

inline double silog_loss(const DepthMap& pred, const DepthMap& gt, const LossConfig& cfg) {
    SPACECLIP_CHECK(pred.rows == gt.rows && pred.cols == gt.cols,
                    "silog_loss: shape mismatch");
    NoGradGuard ng;
    return silog_loss(Tensor::from_vector({pred.rows, pred.cols}, pred.values), gt, cfg)
        .item();
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> gaussian_kernel_1d(int window, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(window));
    const int half = window / 2;
    double s = 0.0;
    for (int i = 0; i < window; ++i) {
        const double d = i - half;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        s += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= s;
    return k;
}

/// Separable Gaussian filter over a (1, 1, H, W) tensor, valid region only.
inline Tensor gaussian_filter(const Tensor& x, int window, double sigma) {
    const auto k = gaussian_kernel_1d(window, sigma);
    Tensor kh = Tensor::from_vector({1, 1, 1, window}, k);
    Tensor kv = Tensor::from_vector({1, 1, window, 1}, k);
    Tensor zero_bias = Tensor::zeros({1});
    Tensor t = conv2d(x, kh, zero_bias, 0, 0);
    return conv2d(t, kv, zero_bias, 0, 0);
}

}  // namespace detail

/// mean(1 - SSIM) with an 11x11 Gaussian window by default, computed over
/// every fully-interior window. Invalid ground-truth pixels are filled with
/// detached prediction values first, so unsupervised regions score SSIM = 1.
inline Tensor ssim_loss(const Tensor& pred, const DepthMap& gt, const LossConfig& cfg) {
    detail::check_pred_map(pred, gt, "ssim_loss");
    const int h = gt.rows, w = gt.cols;
    SPACECLIP_CHECK(h >= cfg.ssim_window && w >= cfg.ssim_window,
                    "ssim_loss: map ", h, "x", w, " smaller than window ", cfg.ssim_window);
    const auto mask = detail::loss_mask(gt, cfg);

    std::vector<double> gt_vals(gt.values);
    std::vector<double> invalid(mask.keep.size());
    for (std::size_t i = 0; i < mask.keep.size(); ++i) {
        invalid[i] = 1.0 - mask.keep[i];
        if (mask.keep[i] == 0.0) gt_vals[i] = 0.0;
    }
    Tensor keep = Tensor::from_vector({h, w}, mask.keep);
    Tensor y = add(Tensor::from_vector({h, w}, std::move(gt_vals)),
                   mul(pred.detach(), Tensor::from_vector({h, w}, std::move(invalid))));

    auto as4d = [h, w](const Tensor& t) {
        auto tn = t.node();
        return detail::make_op({1, 1, h, w}, std::vector<double>(t.values()), {t},
                               [tn](TensorNode& out) {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) tn->grad[i] += out.grad[i];
        });
    };
    Tensor x4 = as4d(pred);
    Tensor y4 = as4d(y);

    const int win = cfg.ssim_window;
    const double sig = cfg.ssim_sigma;
    Tensor mu_x = detail::gaussian_filter(x4, win, sig);
    Tensor mu_y = detail::gaussian_filter(y4, win, sig);
    Tensor mu_xx = mul(mu_x, mu_x);
    Tensor mu_yy = mul(mu_y, mu_y);
    Tensor mu_xy = mul(mu_x, mu_y);
    Tensor sigma_x = sub(detail::gaussian_filter(mul(x4, x4), win, sig), mu_xx);
    Tensor sigma_y = sub(detail::gaussian_filter(mul(y4, y4), win, sig), mu_yy);
    Tensor sigma_xy = sub(detail::gaussian_filter(mul(x4, y4), win, sig), mu_xy);

    Tensor num = mul(add_scalar(mul_scalar(mu_xy, 2.0), cfg.ssim_c1),
                     add_scalar(mul_scalar(sigma_xy, 2.0), cfg.ssim_c2));
    Tensor den = mul(add_scalar(add(mu_xx, mu_yy), cfg.ssim_c1),
                     add_scalar(add(sigma_x, sigma_y), cfg.ssim_c2));
    Tensor ssim_map = div(num, den);
    return add_scalar(mul_scalar(mean(ssim_map), -1.0), 1.0);
}

inline double ssim_loss(const DepthMap& pred, const DepthMap& gt, const LossConfig& cfg) {
    SPACECLIP_CHECK(pred.rows == gt.rows && pred.cols == gt.cols,
                    "ssim_loss: shape mismatch");
    NoGradGuard ng;
    return ssim_loss(Tensor::from_vector({pred.rows, pred.cols}, pred.values), gt, cfg)
        .item();
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
    Tensor total;
    Tensor silog;
    Tensor ssim;
};

inline LossBreakdown total_loss(const Tensor& pred, const DepthMap& gt,
                                const LossConfig& cfg) {
    LossBreakdown out;
    out.silog = silog_loss(pred, gt, cfg);
    out.ssim = ssim_loss(pred, gt, cfg);
    out.total = add(mul_scalar(out.silog, 1.0 - cfg.lambda_ssim),
                    mul_scalar(out.ssim, cfg.lambda_ssim));
    return out;
}

/// Batched form: (B, 1, H, W) predictions against per-image ground truth,
/// reduced per image and then averaged.
inline LossBreakdown total_loss(const Tensor& pred_batch,
                                const std::vector<DepthMap>& gts, const LossConfig& cfg) {
    SPACECLIP_CHECK(pred_batch.ndim() == 4 && pred_batch.dim(1) == 1,
                    "total_loss expects (B, 1, H, W) predictions");
    SPACECLIP_CHECK(pred_batch.dim(0) == static_cast<int>(gts.size()),
                    "total_loss: batch size ", pred_batch.dim(0), " vs ", gts.size(),
                    " ground-truth maps");
    Tensor silog_acc, ssim_acc;
    for (std::size_t b = 0; b < gts.size(); ++b) {
        Tensor p = detail::image_slice(pred_batch, static_cast<int>(b));
        Tensor s = silog_loss(p, gts[b], cfg);
        Tensor m = ssim_loss(p, gts[b], cfg);
        silog_acc = b == 0 ? s : add(silog_acc, s);
        ssim_acc = b == 0 ? m : add(ssim_acc, m);
    }
    const double inv = 1.0 / static_cast<double>(gts.size());
    LossBreakdown out;
    out.silog = mul_scalar(silog_acc, inv);
    out.ssim = mul_scalar(ssim_acc, inv);
    out.total = add(mul_scalar(out.silog, 1.0 - cfg.lambda_ssim),
                    mul_scalar(out.ssim, cfg.lambda_ssim));
    return out;
}

}  // namespace spaceclip
