#include <gtest/gtest.h>

#include <cmath>

#include "spaceclip/losses.hpp"
#include "test_util.hpp"

using namespace spaceclip;

namespace {

// ---------------------------------------------------------------------------
// Independent oracles (plain loops, no tensor machinery)
// ---------------------------------------------------------------------------

// Two-pass SILog: mean of g, then the variance-like radicand.
double silog_oracle(const DepthMap& pred, const DepthMap& gt, const LossConfig& cfg) {
    std::vector<double> g;
    for (int r = 0; r < gt.rows; ++r)
        for (int c = 0; c < gt.cols; ++c) {
            if (!gt.is_valid(r, c)) continue;
            const double d = gt.at(r, c);
            if (d < cfg.min_depth || d > cfg.max_depth) continue;
            g.push_back(std::log(pred.at(r, c)) - std::log(d));
        }
    const double n = static_cast<double>(g.size());
    double sum = 0, sum_sq = 0;
    for (double x : g) sum += x;
    for (double x : g) sum_sq += x * x;
    double radicand = sum_sq / n - cfg.silog_lambda * (sum / n) * (sum / n);
    if (radicand < 0) radicand = 0;
    return cfg.silog_alpha * std::sqrt(radicand);
}

// Windowed SSIM with explicit per-window Gaussian sums over valid placements.
double ssim_oracle(const std::vector<double>& x, const std::vector<double>& y, int rows,
                   int cols, const LossConfig& cfg) {
    const int w = cfg.ssim_window, half = w / 2;
    std::vector<double> k(static_cast<std::size_t>(w));
    double ks = 0;
    for (int i = 0; i < w; ++i) {
        const double d = i - half;
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * cfg.ssim_sigma * cfg.ssim_sigma));
        ks += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= ks;
    double total = 0;
    int count = 0;
    for (int r = half; r < rows - half; ++r) {
        for (int c = half; c < cols - half; ++c) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int dy = -half; dy <= half; ++dy)
                for (int dx = -half; dx <= half; ++dx) {
                    const double wgt = k[static_cast<std::size_t>(dy + half)] * k[static_cast<std::size_t>(dx + half)];
                    const double xv = x[static_cast<std::size_t>((r + dy) * cols + (c + dx))];
                    const double yv = y[static_cast<std::size_t>((r + dy) * cols + (c + dx))];
                    mx += wgt * xv;
                    my += wgt * yv;
                    mxx += wgt * xv * xv;
                    myy += wgt * yv * yv;
                    mxy += wgt * xv * yv;
                }
            const double vx = mxx - mx * mx, vy = myy - my * my, vxy = mxy - mx * my;
            const double ssim = ((2 * mx * my + cfg.ssim_c1) * (2 * vxy + cfg.ssim_c2)) /
                                ((mx * mx + my * my + cfg.ssim_c1) * (vx + vy + cfg.ssim_c2));
            total += 1.0 - ssim;
            ++count;
        }
    }
    return total / count;
}

DepthMap ramp_map(int rows, int cols, double lo, double hi) {
    DepthMap m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            m.at(r, c) = lo + (hi - lo) * (r * cols + c) / static_cast<double>(rows * cols);
    return m;
}

DepthMap random_map(int rows, int cols, Rng& rng, double lo, double hi,
                    double valid_prob = 1.0) {
    DepthMap m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            m.set(r, c, rng.uniform(lo, hi), rng.uniform() < valid_prob);
    return m;
}

Tensor as_tensor(const DepthMap& m) {
    return Tensor::from_vector({m.rows, m.cols}, m.values);
}

}  // namespace

// ---------------------------------------------------------------------------
// SILog
// ---------------------------------------------------------------------------

TEST(Silog, PerfectPredictionIsZero) {
    DepthMap gt = ramp_map(8, 8, 2.0, 60.0);
    LossConfig cfg;
    EXPECT_DOUBLE_EQ(silog_loss(gt, gt, cfg), 0.0);
}

TEST(Silog, UniformLogOffsetClosedForm) {
    // pred = e * gt -> g == 1 -> loss = 10 * sqrt(1 - 0.85)
    DepthMap gt = ramp_map(16, 16, 1.0, 25.0);
    DepthMap pred = gt;
    for (auto& v : pred.values) v *= std::exp(1.0);
    LossConfig cfg;
    const double expect = 10.0 * std::sqrt(0.15);
    EXPECT_NEAR(silog_loss(pred, gt, cfg), expect, 1e-10);
    EXPECT_NEAR(expect, 3.87298, 1e-5);
}

TEST(Silog, JointScaleInvariance) {
    Rng rng(3);
    // Wide mask bounds so scaling never moves pixels in or out of the mask.
    LossConfig cfg;
    cfg.min_depth = 1e-6;
    cfg.max_depth = 1e4;
    DepthMap gt = random_map(12, 12, rng, 1.0, 70.0, 0.8);
    DepthMap pred = random_map(12, 12, rng, 1.0, 70.0);
    const double base = silog_loss(pred, gt, cfg);
    for (double c : {0.5, 2.0, 10.0}) {
        DepthMap ps = pred, gs = gt;
        for (auto& v : ps.values) v *= c;
        for (auto& v : gs.values) v *= c;
        EXPECT_NEAR(silog_loss(ps, gs, cfg), base, 1e-6);
    }
}

TEST(Silog, MatchesTwoPassOracleOnRandomSparseInstances) {
    Rng rng(17);
    LossConfig cfg;
    for (int trial = 0; trial < 25; ++trial) {
        DepthMap gt = random_map(16, 16, rng, 0.5, 90.0, 0.7);  // some outside the cap
        DepthMap pred = random_map(16, 16, rng, 1.0, 79.0);
        EXPECT_NEAR(silog_loss(pred, gt, cfg), silog_oracle(pred, gt, cfg), 1e-9);
    }
}

TEST(Silog, MaskExcludesOutOfRangeGroundTruth) {
    LossConfig cfg;
    DepthMap gt(4, 4, 10.0, true);
    gt.at(0, 0) = 100.0;          // above max_depth: excluded
    gt.set(0, 1, 0.0, false);     // invalid: excluded
    gt.at(0, 2) = 1e-5;           // below min_depth: excluded
    DepthMap pred(4, 4, 10.0, true);
    pred.at(0, 0) = 1.0;
    pred.at(0, 1) = 1.0;
    pred.at(0, 2) = 1.0;  // large errors only on masked-out pixels
    EXPECT_DOUBLE_EQ(silog_loss(pred, gt, cfg), 0.0);
}

TEST(Silog, DegenerateAndDomainErrors) {
    LossConfig cfg;
    DepthMap gt(3, 3, 10.0, false);
    gt.set(1, 1, 10.0, true);  // one valid pixel only
    DepthMap pred(3, 3, 10.0, true);
    EXPECT_THROW(silog_loss(pred, gt, cfg), Error);

    DepthMap gt2(3, 3, 10.0, true);
    DepthMap bad_pred(3, 3, 10.0, true);
    bad_pred.at(0, 0) = -1.0;
    EXPECT_THROW(silog_loss(bad_pred, gt2, cfg), Error);
}

TEST(Silog, GradientMatchesFiniteDifferences) {
    Rng rng(23);
    LossConfig cfg;
    DepthMap gt = random_map(8, 8, rng, 2.0, 60.0, 0.85);
    DepthMap pred0 = random_map(8, 8, rng, 3.0, 50.0);
    Tensor pred = as_tensor(pred0).set_requires_grad(true);
    silog_loss(pred, gt, cfg).backward();
    const auto& analytic = pred.grad();
    for (int i = 0; i < 64; ++i) {
        const double h = 1e-3;
        auto eval = [&](double delta) {
            DepthMap p = pred0;
            p.values[static_cast<std::size_t>(i)] += delta;
            return silog_loss(p, gt, cfg);
        };
        const double numeric = (eval(h) - eval(-h)) / (2 * h);
        if (std::abs(numeric) < 1e-12 && std::abs(analytic[static_cast<std::size_t>(i)]) < 1e-12) continue;
        const double denom = std::max(std::abs(numeric), std::abs(analytic[static_cast<std::size_t>(i)]));
        EXPECT_LT(std::abs(numeric - analytic[static_cast<std::size_t>(i)]) / denom, 1e-4) << "pixel " << i;
    }
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

TEST(Ssim, IdenticalSignalsScoreZero) {
    DepthMap gt = ramp_map(16, 16, 5.0, 70.0);
    LossConfig cfg;
    EXPECT_NEAR(ssim_loss(gt, gt, cfg), 0.0, 1e-12);
}

TEST(Ssim, ConstantMapsClosedForm) {
    // Zero-variance windows: SSIM = (2ab + C1) / (a^2 + b^2 + C1) everywhere.
    LossConfig cfg;
    const double a = 20.0, b = 35.0;
    DepthMap pred(16, 16, a, true);
    DepthMap gt(16, 16, b, true);
    const double expect = 1.0 - (2 * a * b + cfg.ssim_c1) / (a * a + b * b + cfg.ssim_c1);
    EXPECT_NEAR(ssim_loss(pred, gt, cfg), expect, 1e-10);
}

TEST(Ssim, AntiCorrelatedCheckerboardExceedsOne) {
    // Equal mean and variance, opposite phase: interior windows go negative.
    LossConfig cfg;
    const int n = 11;  // single fully-interior window placement
    DepthMap pred(n, n), gt(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const double hi = 50.0, lo = 30.0;
            const bool even = (r + c) % 2 == 0;
            pred.at(r, c) = even ? hi : lo;
            gt.at(r, c) = even ? lo : hi;
        }
    const double loss = ssim_loss(pred, gt, cfg);
    const double oracle = ssim_oracle(pred.values, gt.values, n, n, cfg);
    EXPECT_NEAR(loss, oracle, 1e-9);
    EXPECT_GT(loss, 1.0);
}

TEST(Ssim, MatchesBruteForceOracleOnRandomDenseMaps) {
    Rng rng(31);
    LossConfig cfg;
    for (int trial = 0; trial < 5; ++trial) {
        DepthMap gt = random_map(20, 24, rng, 2.0, 75.0);
        DepthMap pred = random_map(20, 24, rng, 2.0, 75.0);
        EXPECT_NEAR(ssim_loss(pred, gt, cfg),
                    ssim_oracle(pred.values, gt.values, 20, 24, cfg), 1e-9);
    }
}

TEST(Ssim, SymmetricForFullMasks) {
    Rng rng(37);
    LossConfig cfg;
    DepthMap a = random_map(16, 16, rng, 2.0, 75.0);
    DepthMap b = random_map(16, 16, rng, 2.0, 75.0);
    EXPECT_NEAR(ssim_loss(a, b, cfg), ssim_loss(b, a, cfg), 1e-12);
}

TEST(Ssim, RangeStaysWithinZeroTwo) {
    Rng rng(41);
    LossConfig cfg;
    for (int trial = 0; trial < 10; ++trial) {
        DepthMap a = random_map(14, 14, rng, 1.0, 79.0);
        DepthMap b = random_map(14, 14, rng, 1.0, 79.0);
        const double l = ssim_loss(a, b, cfg);
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 2.0);
    }
}

TEST(Ssim, WindowLargerThanMapFailsNamingSizes) {
    LossConfig cfg;
    DepthMap small(8, 8, 10.0, true);
    try {
        ssim_loss(small, small, cfg);
        FAIL() << "expected error";
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("8x8"), std::string::npos);
        EXPECT_NE(msg.find("11"), std::string::npos);
    }
}

TEST(Ssim, InvalidRegionsAreNeutralized) {
    // Fully invalid ground truth: substituted by detached predictions, so the
    // loss is exactly zero and no gradient flows.
    LossConfig cfg;
    Rng rng(43);
    DepthMap gt(16, 16, 0.0, false);
    DepthMap pred0 = random_map(16, 16, rng, 5.0, 60.0);
    Tensor pred = as_tensor(pred0).set_requires_grad(true);
    Tensor loss = ssim_loss(pred, gt, cfg);
    EXPECT_NEAR(loss.item(), 0.0, 1e-12);
    loss.backward();
    // The substituted path is detached; only rounding residue remains.
    for (double g : pred.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Ssim, GradientMatchesFiniteDifferencesSmallWindow) {
    Rng rng(47);
    LossConfig cfg;
    cfg.ssim_window = 7;  // fits an 8x8 map
    DepthMap gt = random_map(8, 8, rng, 5.0, 60.0);
    DepthMap pred0 = random_map(8, 8, rng, 5.0, 60.0);
    Tensor pred = as_tensor(pred0).set_requires_grad(true);
    ssim_loss(pred, gt, cfg).backward();
    const auto& analytic = pred.grad();
    for (int i = 0; i < 64; ++i) {
        const double h = 1e-3;
        auto eval = [&](double delta) {
            DepthMap p = pred0;
            p.values[static_cast<std::size_t>(i)] += delta;
            return ssim_loss(p, gt, cfg);
        };
        const double numeric = (eval(h) - eval(-h)) / (2 * h);
        if (std::abs(numeric) < 1e-12 && std::abs(analytic[static_cast<std::size_t>(i)]) < 1e-12) continue;
        const double denom = std::max(std::abs(numeric), std::abs(analytic[static_cast<std::size_t>(i)]));
        EXPECT_LT(std::abs(numeric - analytic[static_cast<std::size_t>(i)]) / denom, 1e-4) << "pixel " << i;
    }
}

// ---------------------------------------------------------------------------
// Total loss
// ---------------------------------------------------------------------------

TEST(TotalLoss, WeightedCombination) {
    // Components (4.0, 0.2) with lambda 0.5 -> 2.1; verified through scalars.
    LossConfig cfg;
    const double combined = (1 - cfg.lambda_ssim) * 4.0 + cfg.lambda_ssim * 0.2;
    EXPECT_DOUBLE_EQ(combined, 2.1);

    Rng rng(53);
    DepthMap gt = random_map(16, 16, rng, 5.0, 60.0);
    DepthMap pred0 = random_map(16, 16, rng, 5.0, 60.0);
    Tensor pred = as_tensor(pred0);
    LossBreakdown lb = total_loss(pred, gt, cfg);
    EXPECT_NEAR(lb.total.item(),
                0.5 * lb.silog.item() + 0.5 * lb.ssim.item(), 1e-12);

    LossConfig silog_only = cfg;
    silog_only.lambda_ssim = 0.0;
    EXPECT_DOUBLE_EQ(total_loss(pred, gt, silog_only).total.item(),
                     total_loss(pred, gt, silog_only).silog.item());
    LossConfig ssim_only = cfg;
    ssim_only.lambda_ssim = 1.0;
    EXPECT_DOUBLE_EQ(total_loss(pred, gt, ssim_only).total.item(),
                     total_loss(pred, gt, ssim_only).ssim.item());
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
    Rng rng(59);
    LossConfig cfg;
    cfg.ssim_window = 7;
    DepthMap gt = random_map(8, 8, rng, 5.0, 60.0);
    DepthMap pred0 = random_map(8, 8, rng, 5.0, 60.0);
    Tensor pred = as_tensor(pred0).set_requires_grad(true);
    total_loss(pred, gt, cfg).total.backward();
    const auto& analytic = pred.grad();
    auto eval = [&](int i, double delta) {
        DepthMap p = pred0;
        p.values[static_cast<std::size_t>(i)] += delta;
        NoGradGuard ng;
        return total_loss(as_tensor(p), gt, cfg).total.item();
    };
    for (int i = 0; i < 64; ++i) {
        const double h = 1e-3;
        const double numeric = (eval(i, h) - eval(i, -h)) / (2 * h);
        const double denom = std::max(std::abs(numeric), std::abs(analytic[static_cast<std::size_t>(i)]));
        if (denom < 1e-12) continue;
        EXPECT_LT(std::abs(numeric - analytic[static_cast<std::size_t>(i)]) / denom, 1e-4) << "pixel " << i;
    }
}

TEST(TotalLoss, BatchedReductionIsPerImageMean) {
    Rng rng(61);
    LossConfig cfg;
    DepthMap gt_a = random_map(16, 16, rng, 5.0, 60.0);
    DepthMap gt_b = random_map(16, 16, rng, 5.0, 60.0);
    DepthMap pa = random_map(16, 16, rng, 5.0, 60.0);
    DepthMap pb = random_map(16, 16, rng, 5.0, 60.0);
    std::vector<double> batch_vals;
    batch_vals.insert(batch_vals.end(), pa.values.begin(), pa.values.end());
    batch_vals.insert(batch_vals.end(), pb.values.begin(), pb.values.end());
    Tensor batch = Tensor::from_vector({2, 1, 16, 16}, batch_vals);
    LossBreakdown lb = total_loss(batch, {gt_a, gt_b}, cfg);
    const double expect_silog = 0.5 * (silog_loss(pa, gt_a, cfg) + silog_loss(pb, gt_b, cfg));
    const double expect_ssim = 0.5 * (ssim_loss(pa, gt_a, cfg) + ssim_loss(pb, gt_b, cfg));
    EXPECT_NEAR(lb.silog.item(), expect_silog, 1e-12);
    EXPECT_NEAR(lb.ssim.item(), expect_ssim, 1e-12);
}

TEST(TotalLoss, RadicandClampHandlesRoundoff) {
    // Nearly identical maps can push the radicand epsilon-negative; the loss
    // must stay defined (0) rather than NaN.
    DepthMap gt = ramp_map(8, 8, 10.0, 11.0);
    DepthMap pred = gt;
    for (auto& v : pred.values) v *= 1.0 + 1e-15;
    LossConfig cfg;
    const double l = silog_loss(pred, gt, cfg);
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
}
