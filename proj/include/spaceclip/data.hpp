#pragma once

// KITTI Eigen-split ingestion and the procedural synthetic scenes used by
// desk-scale runs. Ground truth is consumed as 16-bit depth PNGs (the
// annotated-depth format downstream of the raw LiDAR scans); all ground-truth
// geometry is nearest-neighbor so sparse returns are never interpolated.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spaceclip/depth_map.hpp"
#include "spaceclip/image.hpp"
#include "spaceclip/png_io.hpp"

namespace spaceclip {

constexpr int kProcessRows = 352;
constexpr int kProcessCols = 704;

struct Sample {
    Image image;      // 352x704x3 in [0, 1]
    DepthMap gt;      // 352x704, sparse validity
    std::string source_id;
};

struct SplitManifest {
    std::vector<std::pair<std::string, std::string>> train_list;  // (image, depth)
    std::vector<std::pair<std::string, std::string>> test_list;
    std::string root;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

inline Sample resize_sample(const Image& image, const DepthMap& gt,
                            int target_rows = kProcessRows, int target_cols = kProcessCols) {
    Sample s;
    s.image = resize_image_bilinear(image, target_rows, target_cols);
    s.gt = resize_depth_nearest(gt, target_rows, target_cols);
    return s;
}

inline Sample hflip_sample(const Sample& s) {
    Sample out;
    out.image = hflip_image(s.image);
    out.gt = hflip_depth(s.gt);
    out.source_id = s.source_id;
    return out;
}

/// Rotate image (bilinear, zero fill) and ground truth (nearest) jointly about
/// the center; target pixels whose preimage falls outside the frame become
/// invalid in the ground truth.
inline Sample rotate_sample(const Sample& s, double angle_deg) {
    if (angle_deg == 0.0) return s;
    const double a = angle_deg * 3.14159265358979323846 / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const int rows = s.image.rows, cols = s.image.cols;
    const double cy = 0.5 * (rows - 1), cx = 0.5 * (cols - 1);
    Sample out;
    out.source_id = s.source_id;
    out.image = Image(rows, cols, 0.0);
    out.gt = DepthMap(rows, cols, 0.0, false);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            // Inverse map: rotate the target coordinate by -angle.
            const double dy = r - cy, dx = c - cx;
            const double sr = ca * dy + sa * dx + cy;
            const double sc = -sa * dy + ca * dx + cx;
            if (sr < 0.0 || sr > rows - 1 || sc < 0.0 || sc > cols - 1) continue;
            for (int ch = 0; ch < 3; ++ch)
                out.image.at(r, c, ch) = detail::sample_bilinear(s.image, sr, sc, ch);
            const int nr = static_cast<int>(sr + 0.5);
            const int nc = static_cast<int>(sc + 0.5);
            if (nr < rows && nc < cols && s.gt.is_valid(nr, nc))
                out.gt.set(r, c, s.gt.at(nr, nc), true);
        }
    }
    return out;
}

/// Training-time augmentation: horizontal flip with probability 0.5, then a
/// rotation uniform in [-1, +1] degrees.
inline Sample augment(const Sample& s, Rng& rng) {
    Sample out = rng.bernoulli(0.5) ? hflip_sample(s) : s;
    const double angle = rng.uniform(-1.0, 1.0);
    return rotate_sample(out, angle);
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// Deterministic procedural scenes: a ground-plane ramp from ~5 m at the
/// bottom of the frame toward 80 m at the horizon, with axis-aligned boxes
/// standing on the ground at their footprint depth. Mirroring LiDAR-derived
/// maps, there are no returns above the horizon and the ground truth fades
/// out beyond the reliable range (65 m); below that it is dense. The rendered
/// image carries depth-correlated shading plus seeded texture noise.
/// gt_keep < 1 additionally sparsifies the ground truth with a seeded
/// dropout mask.
inline std::vector<Sample> synthetic_dataset(int n, std::uint64_t seed,
                                             double gt_keep = 1.0) {
    SPACECLIP_CHECK(n >= 0, "synthetic_dataset: negative count");
    SPACECLIP_CHECK(gt_keep > 0.0 && gt_keep <= 1.0, "gt_keep must be in (0, 1]");
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(n));
    const int rows = kProcessRows, cols = kProcessCols;
    const double near = 5.0, far = 80.0, sensor_range = 65.0;
    const double log_lo = std::log(3.0), log_hi = std::log(far);
    for (int i = 0; i < n; ++i) {
        Rng rng(seed, "synthetic/" + std::to_string(i));
        Sample s;
        s.source_id = "synthetic_" + std::to_string(seed) + "_" + std::to_string(i);
        s.image = Image(rows, cols);
        s.gt = DepthMap(rows, cols, far, true);

        const int horizon = static_cast<int>(rows * rng.uniform(0.32, 0.42));
        for (int r = horizon + 1; r < rows; ++r) {
            const double t = static_cast<double>(r - horizon) / (rows - 1 - horizon);
            const double depth = far + (near - far) * t;
            for (int c = 0; c < cols; ++c) s.gt.at(r, c) = depth;
        }

        const int num_objects = static_cast<int>(rng.uniform_int(3, 6));
        std::vector<std::array<double, 3>> tints;
        std::vector<std::array<int, 4>> boxes;  // r0, r1, c0, c1
        for (int o = 0; o < num_objects; ++o) {
            const int foot = static_cast<int>(rng.uniform_int(horizon + 20, rows - 10));
            const int height = static_cast<int>(rng.uniform_int(30, 110));
            const int width = static_cast<int>(rng.uniform_int(40, 140));
            const int c0 = static_cast<int>(rng.uniform_int(0, cols - width - 1));
            double d = s.gt.at(foot, 0);
            if (d < 4.0) d = 4.0;
            if (d > 55.0) d = 55.0;
            const int r0 = std::max(0, foot - height);
            for (int r = r0; r <= foot; ++r)
                for (int c = c0; c < c0 + width; ++c) s.gt.at(r, c) = d;
            tints.push_back({rng.uniform(0.5, 1.1), rng.uniform(0.5, 1.1),
                             rng.uniform(0.5, 1.1)});
            boxes.push_back({r0, foot, c0, c0 + width});
        }
        // Sky and beyond-range surfaces have no measurement, and depth
        // discontinuities cast occlusion shadows with no returns, as in
        // LiDAR-projected ground truth.
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                if (s.gt.at(r, c) > sensor_range) s.gt.valid[static_cast<std::size_t>(r) * cols + c] = 0;
        std::vector<std::uint8_t> shadow(s.gt.values.size(), 0);
        const int band = 3;
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c + 1 < cols; ++c) {
                const double a = s.gt.at(r, c), b = s.gt.at(r, c + 1);
                if (std::abs(std::log(a) - std::log(b)) > 0.15) {
                    for (int d = -band; d <= band + 1; ++d) {
                        const int cc = c + d;
                        if (cc >= 0 && cc < cols) shadow[static_cast<std::size_t>(r) * cols + cc] = 1;
                    }
                }
            }
        }
        for (int c = 0; c < cols; ++c) {
            for (int r = 0; r + 1 < rows; ++r) {
                const double a = s.gt.at(r, c), b = s.gt.at(r + 1, c);
                if (std::abs(std::log(a) - std::log(b)) > 0.15) {
                    for (int d = -band; d <= band + 1; ++d) {
                        const int rr = r + d;
                        if (rr >= 0 && rr < rows) shadow[static_cast<std::size_t>(rr) * cols + c] = 1;
                    }
                }
            }
        }
        for (std::size_t k = 0; k < shadow.size(); ++k)
            if (shadow[k]) s.gt.valid[k] = 0;

        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                const double depth = s.gt.at(r, c);
                const double shade =
                    1.0 - 0.85 * (std::log(depth) - log_lo) / (log_hi - log_lo);
                double tint[3] = {1.0, 0.97, 0.94};
                for (std::size_t o = 0; o < boxes.size(); ++o) {
                    const auto& b = boxes[o];
                    if (r >= b[0] && r <= b[1] && c >= b[2] && c < b[3]) {
                        tint[0] = tints[o][0];
                        tint[1] = tints[o][1];
                        tint[2] = tints[o][2];
                    }
                }
                const double noise = 0.04 * (rng.uniform() - 0.5);
                for (int ch = 0; ch < 3; ++ch) {
                    double v = shade * tint[ch] + noise;
                    if (v < 0.0) v = 0.0;
                    if (v > 1.0) v = 1.0;
                    s.image.at(r, c, ch) = v;
                }
            }
        }
        if (gt_keep < 1.0) {
            for (auto& flag : s.gt.valid)
                if (!rng.bernoulli(gt_keep)) flag = 0;
        }
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Split manifests
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::pair<std::string, std::string>> parse_split_file(
    const std::string& root, const std::string& list_path,
    std::vector<std::string>& warnings) {
    namespace fs = std::filesystem;
    std::ifstream in(list_path);
    SPACECLIP_CHECK(in, "cannot open split list: ", list_path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string img_rel, depth_rel;
        if (!(ls >> img_rel >> depth_rel)) continue;  // blank or malformed line
        const fs::path img = fs::path(root) / img_rel;
        const fs::path depth = fs::path(root) / depth_rel;
        if (!fs::exists(depth)) {
            warnings.push_back("skipping entry with missing depth file: " + depth.string());
            continue;
        }
        out.emplace_back(img.string(), depth.string());
    }
    return out;
}

}  // namespace detail

inline SplitManifest load_split(const std::string& root, const std::string& train_list,
                                const std::string& test_list) {
    SPACECLIP_CHECK(std::filesystem::exists(root), "data root does not exist: ", root);
    SplitManifest m;
    m.root = root;
    if (!train_list.empty())
        m.train_list = detail::parse_split_file(root, train_list, m.warnings);
    if (!test_list.empty())
        m.test_list = detail::parse_split_file(root, test_list, m.warnings);
    SPACECLIP_CHECK(!m.train_list.empty() || !m.test_list.empty(),
                    "no usable entries found in split files under ", root);
    return m;
}

/// Load one (image, depth) pair and resize to the processing resolution.
inline Sample load_sample(const std::string& image_path, const std::string& depth_path) {
    Image img = load_image_png(image_path);
    DepthMap gt = load_depth_png(depth_path);
    SPACECLIP_CHECK(img.rows == gt.rows && img.cols == gt.cols,
                    "image and depth sizes differ for ", image_path);
    Sample s = resize_sample(img, gt);
    s.source_id = image_path;
    return s;
}

}  // namespace spaceclip
