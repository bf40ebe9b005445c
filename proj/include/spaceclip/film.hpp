#pragma once

// Feature-wise linear modulation of semantic patch tokens, conditioned on the
// backbone's global class vector. One generator MLP per semantic level; the
// output layer starts at zero, so gamma = 1 and beta = 0 until training moves
// them and a modulated forward is exactly the unmodulated one.

#include <vector>

#include "spaceclip/encoder.hpp"
#include "spaceclip/nn.hpp"
#include "spaceclip/tensor.hpp"

namespace spaceclip {

struct FilmParams {
    Tensor gamma;  // (hidden_dim), dimensionless scale
    Tensor beta;   // (hidden_dim), feature-space shift
};

struct FilmGeneratorConfig {
    int hidden_width = 0;  // 0 -> use the backbone hidden_dim
    int num_levels = 4;
};

/// out[i, c] = gamma[c] * tokens[i, c] + beta[c]
inline Tensor apply_film(const Tensor& tokens, const FilmParams& params) {
    SPACECLIP_CHECK(tokens.ndim() == 2, "apply_film expects a 2-d token matrix");
    const int n = tokens.dim(0), c = tokens.dim(1);
    SPACECLIP_CHECK(params.gamma.numel() == c, "apply_film: token width ", c,
                    " does not match gamma width ", params.gamma.numel());
    SPACECLIP_CHECK(params.beta.numel() == c, "apply_film: token width ", c,
                    " does not match beta width ", params.beta.numel());
    std::vector<double> v(tokens.values());
    const double* gp = params.gamma.data();
    const double* bp = params.beta.data();
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            auto& x = v[static_cast<std::size_t>(i) * c + ch];
            x = gp[ch] * x + bp[ch];
        }
    auto tn = tokens.node();
    auto gn = params.gamma.node();
    auto bn = params.beta.node();
    return detail::make_op(tokens.shape(), std::move(v),
                           {tokens, params.gamma, params.beta},
                           [tn, gn, bn, n, c](TensorNode& out) {
        for (int ch = 0; ch < c; ++ch) {
            double dg = 0.0, db = 0.0;
            for (int i = 0; i < n; ++i) {
                const std::size_t k = static_cast<std::size_t>(i) * c + ch;
                const double go = out.grad[k];
                if (tn->requires_grad) {
                    tn->ensure_grad();
                    tn->grad[k] += go * gn->value[static_cast<std::size_t>(ch)];
                }
                dg += go * tn->value[k];
                db += go;
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                gn->grad[static_cast<std::size_t>(ch)] += dg;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                bn->grad[static_cast<std::size_t>(ch)] += db;
            }
        }
    });
}

/// Per-level parameter generators. Each is a one-hidden-layer MLP mapping the
/// class vector to (delta_gamma, beta); gamma = 1 + delta_gamma.
class FilmGeneratorBank {
  public:
    FilmGeneratorBank() = default;
    FilmGeneratorBank(int hidden_dim, FilmGeneratorConfig cfg, Rng& rng)
        : hidden_dim_(hidden_dim), cfg_(cfg) {
        const int width = cfg_.hidden_width > 0 ? cfg_.hidden_width : hidden_dim;
        cfg_.hidden_width = width;
        for (int l = 0; l < cfg_.num_levels; ++l) {
            fc1_.emplace_back(hidden_dim, width, rng);
            fc2_.emplace_back(width, 2 * hidden_dim, rng, /*zero_init=*/true);
        }
    }

    int num_levels() const { return cfg_.num_levels; }
    const FilmGeneratorConfig& config() const { return cfg_; }

    FilmParams generate(const Tensor& cls_vector, int level) const {
        SPACECLIP_CHECK(level >= 0 && level < cfg_.num_levels, "film level ", level,
                        " out of range; configured levels: [0, ", cfg_.num_levels - 1, "]");
        SPACECLIP_CHECK(cls_vector.numel() == hidden_dim_, "film: class vector length ",
                        cls_vector.numel(), " does not match hidden dim ", hidden_dim_);
        Tensor x = Tensor::from_vector({1, hidden_dim_}, cls_vector.values());
        Tensor h = silu(fc1_[static_cast<std::size_t>(level)].forward(x));
        Tensor out = fc2_[static_cast<std::size_t>(level)].forward(h);  // (1, 2*hidden)
        // Reinterpret the (1, 2D) row as a flat vector for slicing.
        Tensor row = detail::make_op({2 * hidden_dim_}, std::vector<double>(out.values()),
                                     {out}, [on = out.node()](TensorNode& o) {
            if (!on->requires_grad) return;
            on->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) on->grad[i] += o.grad[i];
        });
        FilmParams p;
        p.gamma = add_scalar(slice1d(row, 0, hidden_dim_), 1.0);
        p.beta = slice1d(row, hidden_dim_, hidden_dim_);
        return p;
    }

    FilmParams generate(const Vec& cls_vector, int level) const {
        std::vector<double> v(cls_vector.data(), cls_vector.data() + cls_vector.size());
        return generate(Tensor::from_vector({static_cast<int>(cls_vector.size())}, std::move(v)),
                        level);
    }

    void collect(const std::string& prefix, ParamList& out) {
        for (int l = 0; l < cfg_.num_levels; ++l) {
            const std::string lp = prefix + ".level" + std::to_string(l);
            fc1_[static_cast<std::size_t>(l)].collect(lp + ".fc1", out);
            // Generator biases are excluded from weight decay along with all
            // other biases; only the matrices carry decay.
            fc2_[static_cast<std::size_t>(l)].collect(lp + ".fc2", out);
        }
    }

  private:
    int hidden_dim_ = 0;
    FilmGeneratorConfig cfg_;
    std::vector<Linear> fc1_, fc2_;
};

}  // namespace spaceclip
