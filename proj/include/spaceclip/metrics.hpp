#pragma once

// Standard depth evaluation metrics with the Eigen-split protocol: depth cap,
// optional garg crop, sparse ground-truth masking, predictions clamped to the
// cap. Per-image reports are averaged unweighted across a test set.

#include <cmath>
#include <string>
#include <vector>

#include "spaceclip/depth_map.hpp"

namespace spaceclip {

enum class EvalCrop { none, garg };

inline EvalCrop eval_crop_from_string(const std::string& s) {
    if (s == "none") return EvalCrop::none;
    if (s == "garg") return EvalCrop::garg;
    throw Error("unknown eval crop: " + s + " (expected garg or none)");
}

inline std::string to_string(EvalCrop c) { return c == EvalCrop::garg ? "garg" : "none"; }

struct EvalProtocol {
    double cap_min = 1e-3;
    double cap_max = 80.0;
    EvalCrop crop = EvalCrop::garg;
    std::string split = "eigen_test";

    bool operator==(const EvalProtocol& o) const {
        return cap_min == o.cap_min && cap_max == o.cap_max && crop == o.crop &&
               split == o.split;
    }
};

struct MetricsReport {
    double abs_rel = 0.0;
    double sq_rel = 0.0;
    double rmse = 0.0;      // meters
    double rmse_log = 0.0;  // log-meters
    double d1 = 0.0, d2 = 0.0, d3 = 0.0;  // thresholds 1.25, 1.25^2, 1.25^3
    std::int64_t n_pixels = 0;
    EvalProtocol protocol;
};

namespace detail {

struct CropWindow {
    int r0, r1, c0, c1;  // half-open
    bool contains(int r, int c) const { return r >= r0 && r < r1 && c >= c0 && c < c1; }
};

inline CropWindow crop_window(EvalCrop crop, int rows, int cols) {
    if (crop == EvalCrop::garg) {
        return {static_cast<int>(0.40810811 * rows), static_cast<int>(0.99189189 * rows),
                static_cast<int>(0.03594771 * cols), static_cast<int>(0.96405229 * cols)};
    }
    return {0, rows, 0, cols};
}

}  // namespace detail

inline MetricsReport compute_metrics(const DepthMap& pred, const DepthMap& gt,
                                     const EvalProtocol& protocol) {
    SPACECLIP_CHECK(pred.rows == gt.rows && pred.cols == gt.cols,
                    "compute_metrics: prediction ", pred.rows, "x", pred.cols,
                    " vs ground truth ", gt.rows, "x", gt.cols);
    const auto win = detail::crop_window(protocol.crop, gt.rows, gt.cols);
    double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
    std::int64_t n = 0, n1 = 0, n2 = 0, n3 = 0;
    for (int r = win.r0; r < win.r1; ++r) {
        for (int c = win.c0; c < win.c1; ++c) {
            if (!gt.is_valid(r, c)) continue;
            const double g = gt.at(r, c);
            if (g < protocol.cap_min || g > protocol.cap_max) continue;
            double p = pred.at(r, c);
            if (p < protocol.cap_min) p = protocol.cap_min;
            if (p > protocol.cap_max) p = protocol.cap_max;
            const double diff = p - g;
            abs_rel += std::abs(diff) / g;
            sq_rel += diff * diff / g;
            sq += diff * diff;
            const double dl = std::log(p) - std::log(g);
            sq_log += dl * dl;
            const double ratio = p > g ? p / g : g / p;
            if (ratio < 1.25) ++n1;
            if (ratio < 1.25 * 1.25) ++n2;
            if (ratio < 1.25 * 1.25 * 1.25) ++n3;
            ++n;
        }
    }
    SPACECLIP_CHECK(n >= 1, "compute_metrics: no valid pixels after masking (cap [",
                    protocol.cap_min, ", ", protocol.cap_max, "], crop ",
                    to_string(protocol.crop), ")");
    MetricsReport rep;
    const double dn = static_cast<double>(n);
    rep.abs_rel = abs_rel / dn;
    rep.sq_rel = sq_rel / dn;
    rep.rmse = std::sqrt(sq / dn);
    rep.rmse_log = std::sqrt(sq_log / dn);
    rep.d1 = static_cast<double>(n1) / dn;
    rep.d2 = static_cast<double>(n2) / dn;
    rep.d3 = static_cast<double>(n3) / dn;
    rep.n_pixels = n;
    rep.protocol = protocol;
    return rep;
}

/// Unweighted mean over per-image reports; pixel counts are summed.
inline MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports) {
    SPACECLIP_CHECK(!reports.empty(), "aggregate_reports: empty report list");
    for (const auto& r : reports) {
        if (r.protocol == reports.front().protocol) continue;
        std::string diff;
        const auto& a = reports.front().protocol;
        const auto& b = r.protocol;
        if (a.cap_min != b.cap_min || a.cap_max != b.cap_max) diff += " cap";
        if (a.crop != b.crop) diff += " crop";
        if (a.split != b.split) diff += " split";
        throw Error("aggregate_reports: protocol mismatch in fields:" + diff);
    }
    MetricsReport out;
    out.protocol = reports.front().protocol;
    for (const auto& r : reports) {
        out.abs_rel += r.abs_rel;
        out.sq_rel += r.sq_rel;
        out.rmse += r.rmse;
        out.rmse_log += r.rmse_log;
        out.d1 += r.d1;
        out.d2 += r.d2;
        out.d3 += r.d3;
        out.n_pixels += r.n_pixels;
    }
    const double inv = 1.0 / static_cast<double>(reports.size());
    out.abs_rel *= inv;
    out.sq_rel *= inv;
    out.rmse *= inv;
    out.rmse_log *= inv;
    out.d1 *= inv;
    out.d2 *= inv;
    out.d3 *= inv;
    return out;
}

}  // namespace spaceclip
