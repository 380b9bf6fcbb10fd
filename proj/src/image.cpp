#include "remix/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "remix/error.hpp"

namespace remix {

void validate_image(const Image& img) {
    if (img.height <= 0 || img.width <= 0) throw InvalidInput("image has empty extent");
    if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
        throw InvalidInput("image pixel buffer does not match H*W*3");
    }
    for (float v : img.pixels) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw InvalidInput("image value outside [0,1]");
    }
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void save_png(const Image& img, const std::filesystem::path& path) {
    validate_image(img);
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw FormatError("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng initialisation failed");
    }
    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * 3);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed compression settings and no timestamps keep output byte-identical.
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width * 3; ++x) {
            const float v = img.pixels[static_cast<std::size_t>(y) * img.width * 3 + x];
            row[x] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw FormatError("cannot open image: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng initialisation failed");
    }
    Image img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("malformed png: " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img = Image(h, w);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w * 3; ++x) {
            img.pixels[static_cast<std::size_t>(y) * w * 3 + x] = static_cast<float>(row[x]) / 255.0f;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Image hconcat(const std::vector<Image>& images) {
    if (images.empty()) throw InvalidInput("hconcat: no images");
    const int h = images[0].height;
    int w = 0;
    for (const auto& im : images) {
        if (im.height != h) throw InvalidInput("hconcat: height mismatch");
        w += im.width;
    }
    Image out(h, w);
    int off = 0;
    for (const auto& im : images) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < im.width; ++x)
                for (int c = 0; c < 3; ++c) out.at(y, off + x, c) = im.at(y, x, c);
        off += im.width;
    }
    return out;
}

}  // namespace remix
