// SPDX-License-Identifier: Apache-2.0
#include "textforge/masks.hpp"

#include "textforge/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace textforge::masks {

BoundingBox bounding_box(const LatentMask& mask) {
    BoundingBox box{static_cast<int>(mask.values.cols()), static_cast<int>(mask.values.rows()), 0, 0};
    for (int y = 0; y < mask.values.rows(); ++y)
        for (int x = 0; x < mask.values.cols(); ++x) {
            if (!mask.active(y, x)) continue;
            box.x0 = std::min(box.x0, x);
            box.y0 = std::min(box.y0, y);
            box.x1 = std::max(box.x1, x + 1);
            box.y1 = std::max(box.y1, y + 1);
        }
    if (box.empty()) return {};
    return box;
}

BoundingBox bounding_box(const Image& pixel_mask) {
    if (pixel_mask.channels != 1) throw ContractError("bounding_box: mask must be single-channel");
    BoundingBox box{pixel_mask.width, pixel_mask.height, 0, 0};
    for (int y = 0; y < pixel_mask.height; ++y)
        for (int x = 0; x < pixel_mask.width; ++x) {
            if (!mask_on(pixel_mask, x, y)) continue;
            box.x0 = std::min(box.x0, x);
            box.y0 = std::min(box.y0, y);
            box.x1 = std::max(box.x1, x + 1);
            box.y1 = std::max(box.y1, y + 1);
        }
    if (box.empty()) return {};
    return box;
}

namespace {

struct Tap {
    int lo;
    int hi;
    double weight_hi;
};

Tap source_tap(int dst, int in_size, int out_size) {
    const double scale = static_cast<double>(in_size) / out_size;
    const double src = std::max((dst + 0.5) * scale - 0.5, 0.0);
    const int lo = std::min(static_cast<int>(src), in_size - 1);
    const int hi = std::min(lo + 1, in_size - 1);
    return {lo, hi, src - lo};
}

}  // namespace

Matrix resample_bilinear(const Matrix& field, SpatialDims target) {
    if (target.height <= 0 || target.width <= 0 || field.rows() == 0 || field.cols() == 0)
        throw ContractError("resample_bilinear: zero-sized dimensions");
    const int in_h = static_cast<int>(field.rows());
    const int in_w = static_cast<int>(field.cols());
    Matrix out(target.height, target.width);
    for (int y = 0; y < target.height; ++y) {
        const Tap ty = source_tap(y, in_h, target.height);
        for (int x = 0; x < target.width; ++x) {
            const Tap tx = source_tap(x, in_w, target.width);
            const double top = field(ty.lo, tx.lo) * (1 - tx.weight_hi) + field(ty.lo, tx.hi) * tx.weight_hi;
            const double bottom = field(ty.hi, tx.lo) * (1 - tx.weight_hi) + field(ty.hi, tx.hi) * tx.weight_hi;
            out(y, x) = top * (1 - ty.weight_hi) + bottom * ty.weight_hi;
        }
    }
    return out;
}

LatentMask to_latent_mask(const Image& pixel_mask, SpatialDims latent_dims) {
    if (pixel_mask.empty() || latent_dims.height <= 0 || latent_dims.width <= 0)
        throw ContractError("to_latent_mask: zero-sized dimensions");
    if (pixel_mask.channels != 1) throw ContractError("to_latent_mask: mask must be single-channel");
    Matrix field(pixel_mask.height, pixel_mask.width);
    for (int y = 0; y < pixel_mask.height; ++y)
        for (int x = 0; x < pixel_mask.width; ++x) field(y, x) = pixel_mask.at(x, y) / 255.0;
    Matrix values = resample_bilinear(field, latent_dims);
    values = values.cwiseMax(0.0).cwiseMin(1.0);
    return LatentMask(std::move(values));
}

LatentMask resample_mask(const LatentMask& mask, SpatialDims target) {
    if (mask.dims() == target) return mask;
    return LatentMask(resample_bilinear(mask.values, target).cwiseMax(0.0).cwiseMin(1.0), mask.threshold);
}

std::vector<LatentMask> split_character_masks(const LatentMask& latent_mask, std::string_view text) {
    const std::u32string chars = decode_utf8(text);
    if (chars.empty()) throw ValidationError("split_character_masks: empty text");
    const BoundingBox box = bounding_box(latent_mask);
    if (box.empty()) throw ValidationError("split_character_masks: empty mask");

    const int n = static_cast<int>(chars.size());
    const int base = box.width() / n;
    const int remainder = box.width() % n;
    std::vector<LatentMask> strips;
    strips.reserve(chars.size());
    int x = box.x0;
    for (int k = 0; k < n; ++k) {
        const int strip_width = base + (k < remainder ? 1 : 0);
        LatentMask strip = LatentMask::zeros(latent_mask.dims());
        strip.threshold = latent_mask.threshold;
        for (int yy = box.y0; yy < box.y1; ++yy)
            for (int xx = x; xx < x + strip_width; ++xx)
                if (latent_mask.active(yy, xx)) strip.values(yy, xx) = 1.0;
        strips.push_back(std::move(strip));
        x += strip_width;
    }
    return strips;
}

CharWidthPriors::CharWidthPriors(std::unordered_map<char32_t, double> widths, double default_width)
    : widths_(std::move(widths)), default_width_(default_width) {
    if (!(default_width_ > 0.0)) throw ValidationError("character width priors: default width must be positive");
    for (const auto& [c, w] : widths_)
        if (!(w > 0.0)) throw ValidationError("character width priors: widths must be positive");
}

CharWidthPriors CharWidthPriors::standard() {
    constexpr double narrow = 0.4, medium = 0.8, wide = 1.0, extra_wide = 1.3;
    std::unordered_map<char32_t, double> table;
    for (char32_t c = U'a'; c <= U'z'; ++c) table[c] = medium;
    for (char32_t c = U'0'; c <= U'9'; ++c) table[c] = medium;
    for (char32_t c = U'A'; c <= U'Z'; ++c) table[c] = wide;
    for (char32_t c : std::u32string_view(U"Iilj1.")) table[c] = narrow;
    for (char32_t c : std::u32string_view(U"WMwm")) table[c] = extra_wide;
    return CharWidthPriors(std::move(table), medium);
}

CharWidthPriors CharWidthPriors::from_json_text(std::string_view json_text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("character width priors: ") + e.what());
    }
    const bool replace = doc.value("replace", false);
    CharWidthPriors priors = replace ? CharWidthPriors({}, doc.value("default_width", 0.8)) : standard();
    if (doc.contains("default_width")) priors.default_width_ = doc["default_width"].get<double>();
    if (doc.contains("widths")) {
        for (const auto& [key, value] : doc["widths"].items()) {
            const std::u32string cps = decode_utf8(key);
            if (cps.size() != 1) throw ValidationError("character width priors: key '" + key + "' is not one character");
            priors.widths_[cps[0]] = value.get<double>();
        }
    }
    return CharWidthPriors(std::move(priors.widths_), priors.default_width_);
}

CharWidthPriors CharWidthPriors::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open character width priors '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str());
}

double CharWidthPriors::width_of(char32_t c) const {
    const auto it = widths_.find(c);
    return it == widths_.end() ? default_width_ : it->second;
}

double CharWidthPriors::total_width(std::string_view utf8_text) const {
    double total = 0.0;
    for (char32_t c : decode_utf8(utf8_text)) total += width_of(c);
    return total;
}

ShrunkMask shrink_mask(const Image& pixel_mask, std::string_view source_text, std::string_view target_text,
                       const CharWidthPriors& priors, SpatialDims latent_dims, const ShrinkOptions& options) {
    if (source_text.empty() || target_text.empty()) throw ValidationError("shrink_mask: texts must be nonempty");
    const BoundingBox box = bounding_box(pixel_mask);
    if (box.empty()) throw ValidationError("shrink_mask: mask is empty");
    const double source_width = priors.total_width(source_text);
    if (!(source_width > 0.0)) throw ValidationError("shrink_mask: source text has zero total width");
    const double ratio = std::min(1.0, priors.total_width(target_text) / source_width);

    const int new_width = std::max(1, static_cast<int>(std::lround(box.width() * ratio)));
    int x_start = box.x0;
    if (options.anchor == ShrinkAnchor::center) x_start = box.x0 + (box.width() - new_width) / 2;
    if (options.anchor == ShrinkAnchor::right) x_start = box.x1 - new_width;

    int y_start = box.y0;
    int new_height = box.height();
    if (options.shrink_height) {
        new_height = std::max(1, static_cast<int>(std::lround(box.height() * ratio)));
        y_start = box.y0 + (box.height() - new_height) / 2;
    }

    ShrunkMask out;
    out.ratio = ratio;
    out.pixel = Image(pixel_mask.width, pixel_mask.height, 1);
    for (int y = y_start; y < y_start + new_height; ++y)
        for (int x = x_start; x < x_start + new_width; ++x) out.pixel.at(x, y) = pixel_mask.at(x, y);
    out.latent = to_latent_mask(out.pixel, latent_dims);
    return out;
}

MaskSet build_mask_set(const Image& pixel_mask, SpatialDims latent_dims, std::string_view source_text,
                       std::string_view target_text, const CharWidthPriors& priors, const ShrinkOptions& options) {
    if (count_mask_pixels(pixel_mask) == 0) throw ValidationError("mask is empty");
    MaskSet set;
    set.pixel_mask = pixel_mask;
    set.latent_mask = to_latent_mask(pixel_mask, latent_dims);
    if (source_text.empty()) {
        set.shrunk_pixel = pixel_mask;
        set.shrunk_latent = set.latent_mask;
    } else {
        ShrunkMask shrunk = shrink_mask(pixel_mask, source_text, target_text, priors, latent_dims, options);
        set.shrunk_pixel = std::move(shrunk.pixel);
        set.shrunk_latent = std::move(shrunk.latent);
        set.shrink_ratio = shrunk.ratio;
    }
    if (set.shrunk_latent.count() == 0)
        throw ValidationError("mask vanishes at latent resolution; enlarge the mask region");
    set.char_masks = split_character_masks(set.shrunk_latent, target_text);
    return set;
}

LatentMask embed_mask(const LatentMask& mask, SpatialDims target, int x_offset) {
    const SpatialDims src = mask.dims();
    if (src.height != target.height || x_offset < 0 || x_offset + src.width > target.width)
        throw ContractError("embed_mask: mask does not fit at the requested offset");
    LatentMask out = LatentMask::zeros(target);
    out.threshold = mask.threshold;
    out.values.block(0, x_offset, src.height, src.width) = mask.values;
    return out;
}

}  // namespace textforge::masks
