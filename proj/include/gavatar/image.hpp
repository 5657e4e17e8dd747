#pragma once

#include <string>
#include <vector>

namespace gavatar {

// RGB image, row-major, channels interleaved, values linear in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data; // height * width * 3

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

    double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// 8-bit PNG, values scaled by 255 with round-half-up.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

} // namespace gavatar
