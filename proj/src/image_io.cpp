// SPDX-License-Identifier: Apache-2.0

#include "xsyn/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include "xsyn/errors.hpp"

namespace xsyn::image {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f)
            std::fclose(f);
    }
};

void write_to_vector(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
    if (!file)
        throw ParseError("cannot open image " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("invalid PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const auto rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> pixels(rowbytes * height);
    std::vector<png_bytep> rows(height);
    for (png_uint_32 y = 0; y < height; ++y)
        rows[y] = pixels.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out({height, width, 3});
    for (png_uint_32 y = 0; y < height; ++y)
        for (png_uint_32 x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = static_cast<float>(rows[y][3 * x + c]) / 255.0f;
    return out;
}

std::vector<std::uint8_t> encode_png(const Tensor& image) {
    if (image.rank() != 2 && image.rank() != 3)
        throw DimensionError("PNG encoding needs an H x W or H x W x C tensor");
    const std::uint32_t h = image.height();
    const std::uint32_t w = image.width();
    const std::uint32_t c = image.channels();
    if (c != 1 && c != 3)
        throw DimensionError("PNG encoding supports 1 or 3 channels, got " + std::to_string(c));

    std::vector<png_byte> pixels(static_cast<std::size_t>(h) * w * c);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const float v = std::clamp(image[i], 0.0f, 1.0f);
        pixels[i] = static_cast<png_byte>(std::lround(v * 255.0f));
    }

    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG encoding failed");
    }
    png_set_write_fn(png, &out, write_to_vector, flush_noop);
    png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (std::uint32_t y = 0; y < h; ++y)
        png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * w * c);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    const auto bytes = encode_png(image);
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor resize_bilinear(const Tensor& image, std::uint32_t height, std::uint32_t width) {
    const std::uint32_t ih = image.height();
    const std::uint32_t iw = image.width();
    const std::uint32_t c = image.channels();
    if (ih == height && iw == width)
        return image;
    std::vector<std::uint32_t> dims{height, width};
    if (image.rank() == 3)
        dims.push_back(c);
    Tensor out(dims);
    const double sy = static_cast<double>(ih) / height;
    const double sx = static_cast<double>(iw) / width;
    for (std::uint32_t y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(ih - 1));
        const auto y0 = static_cast<std::uint32_t>(fy);
        const std::uint32_t y1 = std::min(y0 + 1, ih - 1);
        const double wy = fy - y0;
        for (std::uint32_t x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(iw - 1));
            const auto x0 = static_cast<std::uint32_t>(fx);
            const std::uint32_t x1 = std::min(x0 + 1, iw - 1);
            const double wx = fx - x0;
            for (std::uint32_t k = 0; k < c; ++k) {
                auto px = [&](std::uint32_t yy, std::uint32_t xx) {
                    return static_cast<double>(image[(static_cast<std::size_t>(yy) * iw + xx) * c + k]);
                };
                const double top = px(y0, x0) * (1 - wx) + px(y0, x1) * wx;
                const double bottom = px(y1, x0) * (1 - wx) + px(y1, x1) * wx;
                out[(static_cast<std::size_t>(y) * width + x) * c + k] =
                    static_cast<float>(top * (1 - wy) + bottom * wy);
            }
        }
    }
    return out;
}

}  // namespace xsyn::image
