#pragma once

// Plain RGB image container (HWC, doubles in [0,1] before backbone
// normalization) and the non-differentiable geometry used by the data
// pipeline. All resampling uses half-pixel centers with edge clamping, the
// same convention as the differentiable resize in nn.hpp.

#include <cmath>
#include <vector>

#include "spaceclip/common.hpp"

namespace spaceclip {

struct Image {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // rows * cols * 3, HWC

    Image() = default;
    Image(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * c * 3, fill) {}

    double& at(int r, int c, int ch) {
        return data[(static_cast<std::size_t>(r) * cols + c) * 3 + ch];
    }
    double at(int r, int c, int ch) const {
        return data[(static_cast<std::size_t>(r) * cols + c) * 3 + ch];
    }
};

namespace detail {
inline double sample_bilinear(const Image& img, double r, double c, int ch) {
    int r0 = static_cast<int>(std::floor(r));
    int c0 = static_cast<int>(std::floor(c));
    double fr = r - r0, fc = c - c0;
    int r1 = r0 + 1, c1 = c0 + 1;
    if (r0 < 0) { r0 = 0; r1 = 0; fr = 0.0; }
    if (c0 < 0) { c0 = 0; c1 = 0; fc = 0.0; }
    if (r1 >= img.rows) { r1 = img.rows - 1; if (r0 >= img.rows) r0 = img.rows - 1; }
    if (c1 >= img.cols) { c1 = img.cols - 1; if (c0 >= img.cols) c0 = img.cols - 1; }
    const double top = img.at(r0, c0, ch) * (1.0 - fc) + img.at(r0, c1, ch) * fc;
    const double bot = img.at(r1, c0, ch) * (1.0 - fc) + img.at(r1, c1, ch) * fc;
    return top * (1.0 - fr) + bot * fr;
}
}  // namespace detail

inline Image resize_image_bilinear(const Image& img, int out_rows, int out_cols) {
    if (img.rows == out_rows && img.cols == out_cols) return img;
    Image out(out_rows, out_cols);
    const double sr = static_cast<double>(img.rows) / out_rows;
    const double sc = static_cast<double>(img.cols) / out_cols;
    for (int r = 0; r < out_rows; ++r) {
        const double src_r = (r + 0.5) * sr - 0.5;
        for (int c = 0; c < out_cols; ++c) {
            const double src_c = (c + 0.5) * sc - 0.5;
            for (int ch = 0; ch < 3; ++ch)
                out.at(r, c, ch) = detail::sample_bilinear(img, src_r, src_c, ch);
        }
    }
    return out;
}

inline Image hflip_image(const Image& img) {
    Image out(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r)
        for (int c = 0; c < img.cols; ++c)
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(r, img.cols - 1 - c, ch);
    return out;
}

}  // namespace spaceclip
