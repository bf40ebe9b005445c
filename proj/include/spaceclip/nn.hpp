#pragma once

// Differentiable layers on top of the tensor engine. Convolutions run as
// im2col + GEMM; the column buffer is rebuilt in the backward pass instead of
// being stored with the graph.

#include <cstring>
#include <string>
#include <vector>

#include "spaceclip/common.hpp"
#include "spaceclip/tensor.hpp"

namespace spaceclip {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const double* x, int c, int h, int w, int kh, int kw,
                   int ph, int pw, double* col) {
    const int oh = h + 2 * ph - kh + 1;
    const int ow = w + 2 * pw - kw + 1;
    // col has rows = c*kh*kw, cols = oh*ow, row-major.
    std::size_t r = 0;
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                double* dst = col + r * static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int sy = oy - ph + ky;
                    if (sy < 0 || sy >= h) {
                        std::memset(dst + static_cast<std::size_t>(oy) * ow, 0,
                                    static_cast<std::size_t>(ow) * sizeof(double));
                        continue;
                    }
                    const double* src_row = plane + static_cast<std::size_t>(sy) * w;
                    double* out_row = dst + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int sx = ox - pw + kx;
                        out_row[ox] = (sx >= 0 && sx < w) ? src_row[sx] : 0.0;
                    }
                }
            }
        }
    }
}

inline void col2im_accum(const double* col, int c, int h, int w, int kh, int kw,
                         int ph, int pw, double* x_grad) {
    const int oh = h + 2 * ph - kh + 1;
    const int ow = w + 2 * pw - kw + 1;
    std::size_t r = 0;
    for (int ci = 0; ci < c; ++ci) {
        double* plane = x_grad + static_cast<std::size_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                const double* src = col + r * static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int sy = oy - ph + ky;
                    if (sy < 0 || sy >= h) continue;
                    double* dst_row = plane + static_cast<std::size_t>(sy) * w;
                    const double* src_row = src + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int sx = ox - pw + kx;
                        if (sx >= 0 && sx < w) dst_row[sx] += src_row[ox];
                    }
                }
            }
        }
    }
}

inline std::vector<double>& conv_scratch() {
    thread_local std::vector<double> buf;
    return buf;
}

}  // namespace detail

/// x: (B, C, H, W), w: (O, C, kh, kw), b: (O), stride 1.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int pad_h, int pad_w) {
    SPACECLIP_CHECK(x.ndim() == 4 && w.ndim() == 4, "conv2d expects 4-d input and weight");
    const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    SPACECLIP_CHECK(w.dim(1) == c, "conv2d: input has ", c, " channels but weight expects ",
                    w.dim(1));
    SPACECLIP_CHECK(b.numel() == o, "conv2d: bias size mismatch");
    const int oh = h + 2 * pad_h - kh + 1;
    const int ow = wd + 2 * pad_w - kw + 1;
    SPACECLIP_CHECK(oh > 0 && ow > 0, "conv2d: kernel ", kh, "x", kw,
                    " larger than padded input ", h, "x", wd);
    const std::size_t col_rows = static_cast<std::size_t>(c) * kh * kw;
    const std::size_t col_cols = static_cast<std::size_t>(oh) * ow;

    std::vector<double> v(static_cast<std::size_t>(batch) * o * col_cols);
    auto& col = detail::conv_scratch();
    col.resize(col_rows * col_cols);
    for (int bi = 0; bi < batch; ++bi) {
        detail::im2col(x.data() + static_cast<std::size_t>(bi) * c * h * wd, c, h, wd, kh,
                       kw, pad_h, pad_w, col.data());
        EigenConstMap W(w.data(), o, static_cast<int>(col_rows));
        EigenConstMap C(col.data(), static_cast<int>(col_rows), static_cast<int>(col_cols));
        EigenMap Y(v.data() + static_cast<std::size_t>(bi) * o * col_cols, o,
                   static_cast<int>(col_cols));
        Y.noalias() = W * C;
        Eigen::Map<const Eigen::VectorXd> bias(b.data(), o);
        Y.colwise() += bias;
    }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return detail::make_op(
        {batch, o, oh, ow}, std::move(v), {x, w, b},
        [xn, wn, bn, batch, c, h, wd, o, kh, kw, pad_h, pad_w, col_rows,
         col_cols](TensorNode& out) {
            auto& col = detail::conv_scratch();
            col.resize(col_rows * col_cols);
            std::vector<double> dcol;
            if (xn->requires_grad) dcol.resize(col_rows * col_cols);
            for (int bi = 0; bi < batch; ++bi) {
                EigenConstMap G(out.grad.data() + static_cast<std::size_t>(bi) * o * col_cols,
                                o, static_cast<int>(col_cols));
                if (wn->requires_grad || xn->requires_grad) {
                    if (wn->requires_grad) {
                        detail::im2col(xn->value.data() + static_cast<std::size_t>(bi) * c * h * wd,
                                       c, h, wd, kh, kw, pad_h, pad_w, col.data());
                        wn->ensure_grad();
                        EigenConstMap C(col.data(), static_cast<int>(col_rows),
                                        static_cast<int>(col_cols));
                        EigenMap(wn->grad.data(), o, static_cast<int>(col_rows)).noalias() +=
                            G * C.transpose();
                    }
                    if (xn->requires_grad) {
                        xn->ensure_grad();
                        EigenConstMap W(wn->value.data(), o, static_cast<int>(col_rows));
                        EigenMap DC(dcol.data(), static_cast<int>(col_rows),
                                    static_cast<int>(col_cols));
                        DC.noalias() = W.transpose() * G;
                        detail::col2im_accum(dcol.data(), c, h, wd, kh, kw, pad_h, pad_w,
                                             xn->grad.data() +
                                                 static_cast<std::size_t>(bi) * c * h * wd);
                    }
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    Eigen::Map<Eigen::VectorXd>(bn->grad.data(), o) += G.rowwise().sum();
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Group normalization
// ---------------------------------------------------------------------------

/// x: (B, C, H, W); gain, bias: (C). Channels are normalized in `groups`
/// equal-sized groups over (channels-in-group, H, W).
inline Tensor group_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         int groups, double eps = 1e-5) {
    SPACECLIP_CHECK(x.ndim() == 4, "group_norm expects (B, C, H, W)");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    SPACECLIP_CHECK(c % groups == 0, "group_norm: ", c, " channels not divisible into ",
                    groups, " groups");
    SPACECLIP_CHECK(gain.numel() == c && bias.numel() == c, "group_norm: affine size mismatch");
    const int cg = c / groups;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t group_elems = static_cast<std::size_t>(cg) * plane;

    std::vector<double> v(x.values().size());
    std::vector<double> means(static_cast<std::size_t>(b) * groups);
    std::vector<double> inv_stds(static_cast<std::size_t>(b) * groups);
    const double* xp = x.data();
    const double* gp = gain.data();
    const double* bp = bias.data();
    for (int bi = 0; bi < b; ++bi) {
        for (int g = 0; g < groups; ++g) {
            const std::size_t off =
                (static_cast<std::size_t>(bi) * c + static_cast<std::size_t>(g) * cg) * plane;
            double m = 0.0;
            for (std::size_t i = 0; i < group_elems; ++i) m += xp[off + i];
            m /= static_cast<double>(group_elems);
            double var = 0.0;
            for (std::size_t i = 0; i < group_elems; ++i) {
                const double d = xp[off + i] - m;
                var += d * d;
            }
            var /= static_cast<double>(group_elems);
            const double inv_std = 1.0 / std::sqrt(var + eps);
            means[static_cast<std::size_t>(bi) * groups + g] = m;
            inv_stds[static_cast<std::size_t>(bi) * groups + g] = inv_std;
            for (int cc = 0; cc < cg; ++cc) {
                const int ch = g * cg + cc;
                const std::size_t coff = off + static_cast<std::size_t>(cc) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xhat = (xp[coff + i] - m) * inv_std;
                    v[coff + i] = gp[ch] * xhat + bp[ch];
                }
            }
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return detail::make_op(
        x.shape(), std::move(v), {x, gain, bias},
        [xn, gn, bn, b, c, h, w, groups, cg, plane, group_elems, means,
         inv_stds](TensorNode& out) {
            if (xn->requires_grad) xn->ensure_grad();
            const double* xp = xn->value.data();
            const double* gp = gn->value.data();
            for (int bi = 0; bi < b; ++bi) {
                for (int g = 0; g < groups; ++g) {
                    const std::size_t off =
                        (static_cast<std::size_t>(bi) * c + static_cast<std::size_t>(g) * cg) *
                        plane;
                    const double m = means[static_cast<std::size_t>(bi) * groups + g];
                    const double inv_std = inv_stds[static_cast<std::size_t>(bi) * groups + g];
                    // Accumulate the two group-wide reductions of dxhat.
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (int cc = 0; cc < cg; ++cc) {
                        const int ch = g * cg + cc;
                        const std::size_t coff = off + static_cast<std::size_t>(cc) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double go = out.grad[coff + i];
                            const double xhat = (xp[coff + i] - m) * inv_std;
                            const double dxhat = go * gp[ch];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                    }
                    const double n_inv = 1.0 / static_cast<double>(group_elems);
                    for (int cc = 0; cc < cg; ++cc) {
                        const int ch = g * cg + cc;
                        const std::size_t coff = off + static_cast<std::size_t>(cc) * plane;
                        double dgain = 0.0, dbias = 0.0;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double go = out.grad[coff + i];
                            const double xhat = (xp[coff + i] - m) * inv_std;
                            if (xn->requires_grad) {
                                const double dxhat = go * gp[ch];
                                xn->grad[coff + i] +=
                                    inv_std *
                                    (dxhat - n_inv * (sum_dxhat + xhat * sum_dxhat_xhat));
                            }
                            dgain += go * xhat;
                            dbias += go;
                        }
                        if (gn->requires_grad) {
                            gn->ensure_grad();
                            gn->grad[static_cast<std::size_t>(ch)] += dgain;
                        }
                        if (bn->requires_grad) {
                            bn->ensure_grad();
                            bn->grad[static_cast<std::size_t>(ch)] += dbias;
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Bilinear resize
// ---------------------------------------------------------------------------

namespace detail {

struct ResizeTaps {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

/// Half-pixel-center mapping with edge clamping.
inline ResizeTaps resize_taps(int src, int dst) {
    ResizeTaps t;
    t.lo.resize(static_cast<std::size_t>(dst));
    t.hi.resize(static_cast<std::size_t>(dst));
    t.frac.resize(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double s = (i + 0.5) * scale - 0.5;
        double fl = std::floor(s);
        double f = s - fl;
        int lo = static_cast<int>(fl);
        int hi = lo + 1;
        if (lo < 0) { lo = 0; hi = 0; f = 0.0; }
        if (hi >= src) { hi = src - 1; if (lo >= src) lo = src - 1; }
        if (lo == hi) f = 0.0;
        t.lo[static_cast<std::size_t>(i)] = lo;
        t.hi[static_cast<std::size_t>(i)] = hi;
        t.frac[static_cast<std::size_t>(i)] = f;
    }
    return t;
}

}  // namespace detail

/// x: (B, C, H, W) -> (B, C, oh, ow), half-pixel centers, edges clamped.
inline Tensor bilinear_resize(const Tensor& x, int oh, int ow) {
    SPACECLIP_CHECK(x.ndim() == 4, "bilinear_resize expects (B, C, H, W)");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto ty = detail::resize_taps(h, oh);
    const auto tx = detail::resize_taps(w, ow);
    std::vector<double> v(static_cast<std::size_t>(b) * c * oh * ow);
    const double* xp = x.data();
    for (int bc = 0; bc < b * c; ++bc) {
        const double* src = xp + static_cast<std::size_t>(bc) * h * w;
        double* dst = v.data() + static_cast<std::size_t>(bc) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            const int y0 = ty.lo[static_cast<std::size_t>(oy)], y1 = ty.hi[static_cast<std::size_t>(oy)];
            const double fy = ty.frac[static_cast<std::size_t>(oy)];
            const double* r0 = src + static_cast<std::size_t>(y0) * w;
            const double* r1 = src + static_cast<std::size_t>(y1) * w;
            for (int ox = 0; ox < ow; ++ox) {
                const int x0 = tx.lo[static_cast<std::size_t>(ox)], x1 = tx.hi[static_cast<std::size_t>(ox)];
                const double fx = tx.frac[static_cast<std::size_t>(ox)];
                const double top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                const double bot = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                dst[static_cast<std::size_t>(oy) * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    auto xn = x.node();
    return detail::make_op({b, c, oh, ow}, std::move(v), {x},
                           [xn, b, c, h, w, oh, ow, ty, tx](TensorNode& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int bc = 0; bc < b * c; ++bc) {
            double* dst = xn->grad.data() + static_cast<std::size_t>(bc) * h * w;
            const double* g = out.grad.data() + static_cast<std::size_t>(bc) * oh * ow;
            for (int oy = 0; oy < oh; ++oy) {
                const int y0 = ty.lo[static_cast<std::size_t>(oy)], y1 = ty.hi[static_cast<std::size_t>(oy)];
                const double fy = ty.frac[static_cast<std::size_t>(oy)];
                for (int ox = 0; ox < ow; ++ox) {
                    const int x0 = tx.lo[static_cast<std::size_t>(ox)], x1 = tx.hi[static_cast<std::size_t>(ox)];
                    const double fx = tx.frac[static_cast<std::size_t>(ox)];
                    const double go = g[static_cast<std::size_t>(oy) * ow + ox];
                    dst[static_cast<std::size_t>(y0) * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                    dst[static_cast<std::size_t>(y0) * w + x1] += go * (1.0 - fy) * fx;
                    dst[static_cast<std::size_t>(y1) * w + x0] += go * fy * (1.0 - fx);
                    dst[static_cast<std::size_t>(y1) * w + x1] += go * fy * fx;
                }
            }
        }
    });
}

inline Tensor upsample2x(const Tensor& x) {
    return bilinear_resize(x, x.dim(2) * 2, x.dim(3) * 2);
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout. Identity when not training or p == 0.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    SPACECLIP_CHECK(p < 1.0, "dropout rate must be < 1, got ", p);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.values().size());
    for (auto& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
    std::vector<double> v(x.values());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
    auto xn = x.node();
    return detail::make_op(x.shape(), std::move(v), {x},
                           [xn, mask = std::move(mask)](TensorNode& out) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i)
            xn->grad[i] += out.grad[i] * mask[i];
    });
}

// ---------------------------------------------------------------------------
// Feature-wise modulation kernels
// ---------------------------------------------------------------------------

/// x: (B, C, H, W), gamma/beta: (B, C). out = gamma * x + beta per channel.
inline Tensor film_bchw(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    SPACECLIP_CHECK(x.ndim() == 4, "film_bchw expects (B, C, H, W)");
    const int b = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    SPACECLIP_CHECK(gamma.ndim() == 2 && gamma.dim(0) == b && gamma.dim(1) == c,
                    "film_bchw: gamma shape ", shape_str(gamma.shape()),
                    " incompatible with input ", shape_str(x.shape()));
    detail::check_same_shape(gamma, beta, "film_bchw");
    std::vector<double> v(x.values());
    const double* gp = gamma.data();
    const double* bp = beta.data();
    for (int i = 0; i < b * c; ++i) {
        double* dst = v.data() + static_cast<std::size_t>(i) * plane;
        for (std::size_t j = 0; j < plane; ++j) dst[j] = gp[i] * dst[j] + bp[i];
    }
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return detail::make_op(x.shape(), std::move(v), {x, gamma, beta},
                           [xn, gn, bn, b, c, plane](TensorNode& out) {
        for (int i = 0; i < b * c; ++i) {
            const double* g = out.grad.data() + static_cast<std::size_t>(i) * plane;
            const double* xv = xn->value.data() + static_cast<std::size_t>(i) * plane;
            if (xn->requires_grad) {
                xn->ensure_grad();
                double* dx = xn->grad.data() + static_cast<std::size_t>(i) * plane;
                const double gamma_i = gn->value[static_cast<std::size_t>(i)];
                for (std::size_t j = 0; j < plane; ++j) dx[j] += g[j] * gamma_i;
            }
            if (gn->requires_grad || bn->requires_grad) {
                double dg = 0.0, db = 0.0;
                for (std::size_t j = 0; j < plane; ++j) {
                    dg += g[j] * xv[j];
                    db += g[j];
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    gn->grad[static_cast<std::size_t>(i)] += dg;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[static_cast<std::size_t>(i)] += db;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Layer modules
// ---------------------------------------------------------------------------

struct ParamRef {
    std::string name;
    Tensor tensor;
    bool decay = false;  // weight decay applies only to conv/linear weights
};
using ParamList = std::vector<ParamRef>;

namespace init {

inline Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.normal() * std_dev;
    return Tensor::from_vector(std::move(shape), std::move(v), true);
}

}  // namespace init

struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 0, pad = 0;
    Tensor weight;  // (O, C, k, k)
    Tensor bias;    // (O)

    Conv2d() = default;
    Conv2d(int in, int out, int k, Rng& rng, bool zero_init = false)
        : in_ch(in), out_ch(out), ksize(k), pad(k / 2) {
        if (zero_init) {
            weight = Tensor::zeros({out, in, k, k}, true);
        } else {
            weight = init::he_normal({out, in, k, k}, in * k * k, rng);
        }
        bias = Tensor::zeros({out}, true);
    }

    Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, pad, pad); }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".weight", weight, true});
        out.push_back({prefix + ".bias", bias, false});
    }
};

struct Linear {
    Tensor weight;  // (out, in)
    Tensor bias;    // (out)

    Linear() = default;
    Linear(int in, int out, Rng& rng, bool zero_init = false) {
        if (zero_init) {
            weight = Tensor::zeros({out, in}, true);
        } else {
            weight = init::he_normal({out, in}, in, rng);
        }
        bias = Tensor::zeros({out}, true);
    }

    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".weight", weight, true});
        out.push_back({prefix + ".bias", bias, false});
    }
};

struct GroupNorm {
    int groups = 8;
    Tensor gain;  // (C)
    Tensor bias;  // (C)

    GroupNorm() = default;
    GroupNorm(int channels, int num_groups) : groups(num_groups) {
        gain = Tensor::full({channels}, 1.0, true);
        bias = Tensor::zeros({channels}, true);
    }

    Tensor forward(const Tensor& x) const { return group_norm(x, gain, bias, groups); }

    void collect(const std::string& prefix, ParamList& out) {
        out.push_back({prefix + ".gain", gain, false});
        out.push_back({prefix + ".bias", bias, false});
    }
};

/// Pre-activation residual unit: x + conv2(act(gn2(drop(conv1(act(gn1(x))))))).
/// The second convolution starts at zero so the block is the identity at
/// construction.
struct ResidualBlock {
    GroupNorm gn1, gn2;
    Conv2d conv1, conv2;
    double dropout_p = 0.1;

    ResidualBlock() = default;
    ResidualBlock(int channels, double dropout, Rng& rng, int groups = 8)
        : gn1(channels, groups),
          gn2(channels, groups),
          conv1(channels, channels, 3, rng),
          conv2(channels, channels, 3, rng, /*zero_init=*/true),
          dropout_p(dropout) {}

    Tensor forward(const Tensor& x, Rng& drop_rng, bool training) const {
        Tensor h = conv1.forward(silu(gn1.forward(x)));
        h = dropout(h, dropout_p, drop_rng, training);
        h = conv2.forward(silu(gn2.forward(h)));
        return add(x, h);
    }

    void collect(const std::string& prefix, ParamList& out) {
        gn1.collect(prefix + ".gn1", out);
        conv1.collect(prefix + ".conv1", out);
        gn2.collect(prefix + ".gn2", out);
        conv2.collect(prefix + ".conv2", out);
    }
};

}  // namespace spaceclip
