// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace textforge {

/// 8-bit interleaved image. Masks are single-channel images where 255 marks the editable region.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c, std::uint8_t fill = 0);

    bool empty() const { return width == 0 || height == 0; }
    std::uint8_t& at(int x, int y, int c = 0) { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }
    std::uint8_t at(int x, int y, int c = 0) const { return pixels[(static_cast<size_t>(y) * width + x) * channels + c]; }

    bool operator==(const Image&) const = default;
};

/// A mask pixel counts as editable when it is at least half intensity.
inline bool mask_on(const Image& mask, int x, int y) { return mask.at(x, y) >= 128; }

std::size_t count_mask_pixels(const Image& mask);

Image to_rgb(const Image& image);
Image to_gray(const Image& image);

/// Extracts [x, x + w) x [y, y + h); throws ContractError when out of bounds.
Image crop(const Image& image, int x, int y, int w, int h);

/// Pixels where `mask` is on come from `inside`, all others from `outside`. Both images are
/// brought to RGB when their channel counts differ.
Image composite(const Image& inside, const Image& outside, const Image& mask);

/// Bilinear resize (pixel-center aligned).
Image resize_bilinear(const Image& image, int width, int height);

// PNG file access. Grayscale+alpha and RGBA inputs drop their alpha channel.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
std::string encode_png(const Image& image);
Image decode_png(const std::string& bytes);

}  // namespace textforge
