#pragma once

#include <cstdint>
#include <vector>

#include "spaceclip/common.hpp"

namespace spaceclip {

/// Metric depth grid. `valid` marks pixels with defined depth; predictions
/// carry all-true masks, LiDAR-derived ground truth is sparse.
struct DepthMap {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;

    DepthMap() = default;
    DepthMap(int r, int c, double fill = 0.0, bool valid_fill = true)
        : rows(r),
          cols(c),
          values(static_cast<std::size_t>(r) * c, fill),
          valid(static_cast<std::size_t>(r) * c, valid_fill ? 1 : 0) {}

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
    bool is_valid(int r, int c) const {
        return valid[static_cast<std::size_t>(r) * cols + c] != 0;
    }
    void set(int r, int c, double v, bool ok = true) {
        values[static_cast<std::size_t>(r) * cols + c] = v;
        valid[static_cast<std::size_t>(r) * cols + c] = ok ? 1 : 0;
    }

    std::int64_t valid_count() const {
        std::int64_t n = 0;
        for (auto v : valid) n += v != 0;
        return n;
    }
};

/// Nearest-neighbor resize preserving the validity mask; never interpolates
/// across invalid pixels.
inline DepthMap resize_depth_nearest(const DepthMap& gt, int out_rows, int out_cols) {
    if (gt.rows == out_rows && gt.cols == out_cols) return gt;
    DepthMap out(out_rows, out_cols, 0.0, false);
    const double sr = static_cast<double>(gt.rows) / out_rows;
    const double sc = static_cast<double>(gt.cols) / out_cols;
    for (int r = 0; r < out_rows; ++r) {
        int src_r = static_cast<int>(std::floor((r + 0.5) * sr));
        if (src_r >= gt.rows) src_r = gt.rows - 1;
        for (int c = 0; c < out_cols; ++c) {
            int src_c = static_cast<int>(std::floor((c + 0.5) * sc));
            if (src_c >= gt.cols) src_c = gt.cols - 1;
            out.set(r, c, gt.at(src_r, src_c), gt.is_valid(src_r, src_c));
        }
    }
    return out;
}

inline DepthMap hflip_depth(const DepthMap& gt) {
    DepthMap out(gt.rows, gt.cols);
    for (int r = 0; r < gt.rows; ++r)
        for (int c = 0; c < gt.cols; ++c)
            out.set(r, c, gt.at(r, gt.cols - 1 - c), gt.is_valid(r, gt.cols - 1 - c));
    return out;
}

}  // namespace spaceclip
