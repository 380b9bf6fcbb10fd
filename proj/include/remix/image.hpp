#pragma once

#include <filesystem>
#include <vector>

namespace remix {

// H x W x 3 image with values in [0,1], stored row-major HWC.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool operator==(const Image& o) const {
        return height == o.height && width == o.width && pixels == o.pixels;
    }
};

// Throws InvalidInput on non-finite or out-of-range values.
void validate_image(const Image& img);

// 8-bit RGB PNG. Values are rounded to the nearest of 256 levels on save.
void save_png(const Image& img, const std::filesystem::path& path);
Image load_png(const std::filesystem::path& path);

// Horizontal concatenation of equally tall images.
Image hconcat(const std::vector<Image>& images);

}  // namespace remix
