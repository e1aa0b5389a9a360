// SPDX-License-Identifier: Apache-2.0
#include "textforge/image.hpp"

#include "textforge/types.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace textforge {

Image::Image(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c), pixels(static_cast<size_t>(w) * h * c, fill) {}

std::size_t count_mask_pixels(const Image& mask) {
    std::size_t n = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            n += mask_on(mask, x, y) ? 1 : 0;
    return n;
}

Image to_rgb(const Image& image) {
    if (image.channels == 3) return image;
    if (image.channels != 1) throw ContractError("to_rgb: expected 1 or 3 channels");
    Image out(image.width, image.height, 3);
    for (size_t i = 0; i < image.pixels.size(); ++i)
        for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = image.pixels[i];
    return out;
}

Image to_gray(const Image& image) {
    if (image.channels == 1) return image;
    if (image.channels != 3) throw ContractError("to_gray: expected 1 or 3 channels");
    Image out(image.width, image.height, 1);
    for (size_t i = 0; i < out.pixels.size(); ++i) {
        const double v = 0.299 * image.pixels[i * 3] + 0.587 * image.pixels[i * 3 + 1] + 0.114 * image.pixels[i * 3 + 2];
        out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    return out;
}

Image crop(const Image& image, int x, int y, int w, int h) {
    if (x < 0 || y < 0 || w < 0 || h < 0 || x + w > image.width || y + h > image.height)
        throw ContractError("crop: rectangle outside image bounds");
    Image out(w, h, image.channels);
    const size_t row_bytes = static_cast<size_t>(w) * image.channels;
    if (row_bytes == 0) return out;
    for (int r = 0; r < h; ++r) {
        const size_t src = (static_cast<size_t>(y + r) * image.width + x) * image.channels;
        std::memcpy(out.pixels.data() + static_cast<size_t>(r) * row_bytes, image.pixels.data() + src, row_bytes);
    }
    return out;
}

Image composite(const Image& inside, const Image& outside, const Image& mask) {
    if (inside.width != outside.width || inside.height != outside.height || mask.width != inside.width ||
        mask.height != inside.height)
        throw ContractError("composite: image and mask dimensions differ");
    if (mask.channels != 1) throw ContractError("composite: mask must be single-channel");
    const bool same = inside.channels == outside.channels;
    const Image a = same ? inside : to_rgb(inside);
    Image out = same ? outside : to_rgb(outside);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            if (mask_on(mask, x, y))
                for (int c = 0; c < out.channels; ++c) out.at(x, y, c) = a.at(x, y, c);
    return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
    if (width <= 0 || height <= 0 || image.empty()) throw ContractError("resize_bilinear: empty dimensions");
    Image out(width, height, image.channels);
    const double sx = static_cast<double>(image.width) / width;
    const double sy = static_cast<double>(image.height) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < image.channels; ++c) {
                const double top = image.at(x0, y0, c) * (1 - wx) + image.at(x1, y0, c) * wx;
                const double bottom = image.at(x0, y1, c) * (1 - wx) + image.at(x1, y1, c) * wx;
                out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(top * (1 - wy) + bottom * wy), 0L, 255L));
            }
        }
    }
    return out;
}

namespace {

Image finish_read(png_image& png) {
    const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Image out(static_cast<int>(png.width), static_cast<int>(png.height), color ? 3 : 1);
    if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
        const std::string message = png.message;
        png_image_free(&png);
        throw ValidationError("png decode failed: " + message);
    }
    return out;
}

png_image make_write_image(const Image& image) {
    if (image.channels != 1 && image.channels != 3) throw ContractError("png: only 1 or 3 channel images can be written");
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    return png;
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str()))
        throw ValidationError("cannot read png '" + path.string() + "': " + png.message);
    return finish_read(png);
}

Image decode_png(const std::string& bytes) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw ValidationError(std::string("cannot decode png: ") + png.message);
    return finish_read(png);
}

void write_png(const std::filesystem::path& path, const Image& image) {
    png_image png = make_write_image(image);
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, image.pixels.data(), 0, nullptr))
        throw std::runtime_error("cannot write png '" + path.string() + "': " + png.message);
}

std::string encode_png(const Image& image) {
    png_image png = make_write_image(image);
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + png.message);
    std::string bytes(size, '\0');
    if (!png_image_write_to_memory(&png, bytes.data(), &size, 0, image.pixels.data(), 0, nullptr))
        throw std::runtime_error(std::string("png encode failed: ") + png.message);
    bytes.resize(size);
    return bytes;
}

}  // namespace textforge
