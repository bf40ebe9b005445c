#pragma once

// Qualitative depth export: 16-bit PNG in the ingestion format (meters * 256)
// plus an 8-bit colorized view using the turbo colormap (polynomial fit),
// normalized to [min_depth, max_depth].

#include <array>
#include <filesystem>
#include <string>

#include "spaceclip/depth_map.hpp"
#include "spaceclip/image.hpp"
#include "spaceclip/png_io.hpp"

namespace spaceclip {

/// Turbo colormap, t in [0, 1] -> rgb in [0, 1].
inline std::array<double, 3> turbo_colormap(double t) {
    if (t < 0.0) t = 0.0;
    if (t > 1.0) t = 1.0;
    static constexpr double r[6] = {0.13572138, 4.61539260, -42.66032258,
                                    132.13108234, -152.94239396, 59.28637943};
    static constexpr double g[6] = {0.09140261, 2.19418839, 4.84296658,
                                    -14.18503333, 4.27729857, 2.82956604};
    static constexpr double b[6] = {0.10667330, 12.64194608, -60.58204836,
                                    110.36276771, -89.90310912, 27.34824973};
    auto poly = [t](const double* c) {
        double v = c[5];
        for (int i = 4; i >= 0; --i) v = v * t + c[i];
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        return v;
    };
    return {poly(r), poly(g), poly(b)};
}

inline Image colorize_depth(const DepthMap& depth, double min_depth, double max_depth) {
    Image out(depth.rows, depth.cols);
    const double span = max_depth - min_depth;
    for (int r = 0; r < depth.rows; ++r) {
        for (int c = 0; c < depth.cols; ++c) {
            if (!depth.is_valid(r, c)) continue;  // invalid stays black
            const auto rgb = turbo_colormap((depth.at(r, c) - min_depth) / span);
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = rgb[static_cast<std::size_t>(ch)];
        }
    }
    return out;
}

/// Writes <stem>_depth.png (16-bit metric) and <stem>_color.png (8-bit turbo).
inline void export_depth_artifacts(const DepthMap& depth, const std::string& out_dir,
                                   const std::string& stem, double min_depth,
                                   double max_depth) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    save_depth_png((fs::path(out_dir) / (stem + "_depth.png")).string(), depth);
    save_image_png((fs::path(out_dir) / (stem + "_color.png")).string(),
                   colorize_depth(depth, min_depth, max_depth));
}

}  // namespace spaceclip
