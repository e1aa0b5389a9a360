// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "textforge/types.hpp"

#include <cstdint>

namespace textforge {

/// Latent tensor stored position-major: values(y * width + x, channel).
struct Latent {
    int channels = 0;
    int height = 0;
    int width = 0;
    Matrix values;

    Latent() = default;
    Latent(int c, int h, int w) : channels(c), height(h), width(w), values(Matrix::Zero(static_cast<Eigen::Index>(h) * w, c)) {}
    Latent(int c, int h, int w, Matrix v);

    SpatialDims dims() const { return {height, width}; }
    double& at(int c, int y, int x) { return values(static_cast<Eigen::Index>(y) * width + x, c); }
    double at(int c, int y, int x) const { return values(static_cast<Eigen::Index>(y) * width + x, c); }

    bool same_shape(const Latent& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }
    bool operator==(const Latent& other) const { return same_shape(other) && values == other.values; }
};

/// Standard normal latent drawn from a 64-bit Mersenne Twister seeded with `seed`.
Latent gaussian_latent(int channels, int height, int width, std::uint64_t seed);

/// Side-by-side concatenation along the width axis.
Latent concat_width(const Latent& left, const Latent& right);

/// Sub-latent [x, x + w) x [y, y + h).
Latent crop_latent(const Latent& latent, int x, int y, int w, int h);

}  // namespace textforge
