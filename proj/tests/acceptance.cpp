// SPDX-License-Identifier: Apache-2.0
// Acceptance checks: one PASS/FAIL line per criterion, each within its runtime budget.

#include "textforge/application.hpp"
#include "textforge/eval.hpp"
#include "textforge/grid.hpp"
#include "textforge/losses.hpp"
#include "textforge/masks.hpp"
#include "textforge/pipeline.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

using namespace textforge;
using namespace textforge::testing;
using attention::AttentionKind;
using attention::AttentionMap;
using attention::LatentMask;
using attention::TokenLayout;

namespace {

/// Outcome of one criterion: the first violated property, or empty when all hold.
struct Check {
    std::string failure;
    void require(bool ok, const std::string& what) {
        if (!ok && failure.empty()) failure = what;
    }
    bool ok() const { return failure.empty(); }
};

using Criterion = std::function<void(Check&)>;

bool run(const char* name, double budget_seconds, const Criterion& body) {
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(check);
    } catch (const std::exception& e) {
        check.require(false, std::string("exception: ") + e.what());
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    check.require(elapsed < budget_seconds, "runtime budget exceeded");
    std::printf("%s  %-28s %7.2f s (limit %5.1f s)%s%s\n", check.ok() ? "PASS" : "FAIL", name, elapsed, budget_seconds,
                check.ok() ? "" : "  ", check.failure.c_str());
    std::fflush(stdout);
    return check.ok();
}

// --- attention edits ---------------------------------------------------------------------------

void sai_criterion(Check& c) {
    Rng rng(1001);
    const SpatialDims dims{8, 8};
    for (int trial = 0; trial < 1000 && c.ok(); ++trial) {
        const AttentionMap map = random_self_map(rng, dims);
        const LatentMask mask = random_latent_mask(rng, dims, uniform(rng, 0.0, 1.0));
        const AttentionMap out = attention::invert_self_attention(map, mask);
        const AttentionMap flipped = attention::invert_self_attention(map, mask, false);
        c.require((out.probs - sai_oracle(map.probs, mask)).cwiseAbs().maxCoeff() < 1e-6, "oracle mismatch");
        for (int i = 0; i < dims.cells(); ++i) {
            if (!mask.active(i)) {
                c.require(out.probs.row(i) == map.probs.row(i), "unmasked row changed");
                continue;
            }
            Eigen::Index amax, amin;
            const double hi = map.probs.row(i).maxCoeff(&amax);
            const double lo = map.probs.row(i).minCoeff(&amin);
            c.require(std::abs(flipped.probs(i, amax) - lo) < 1e-15, "argmax not mapped to the minimum");
            c.require(std::abs(flipped.probs(i, amin) - hi) < 1e-15, "argmin not mapped to the maximum");
        }
    }
}

void car_check(Check& c, const AttentionMap& map, const LatentMask& mask, const TokenLayout& layout) {
    const AttentionMap out = attention::reassign_cross_attention(map, mask, layout);
    for (int i = 0; i < map.dims.cells(); ++i) {
        const int hot = mask.active(i) ? layout.end_description : layout.start_description;
        for (int j = 0; j < map.cols(); ++j) c.require(out.probs(i, j) == (j == hot ? 1.0 : 0.0), "row is not the exact one-hot");
    }
    c.require(attention::reassign_cross_attention(out, mask, layout).probs == out.probs, "not idempotent");
}

void car_criterion(Check& c) {
    Rng rng(1002);
    const TokenLayout small = TokenLayout::for_text(2, 8);
    for (int bits = 0; bits < 16; ++bits) {
        Matrix v(2, 2);
        for (int k = 0; k < 4; ++k) v(k / 2, k % 2) = (bits >> k) & 1;
        car_check(c, random_cross_map(rng, {2, 2}, 8), LatentMask(v), small);
    }
    const TokenLayout layout = TokenLayout::for_text(6, 24);
    for (int trial = 0; trial < 200; ++trial)
        car_check(c, random_cross_map(rng, {16, 16}, 24), random_latent_mask(rng, {16, 16}, uniform(rng, 0.0, 1.0)), layout);
}

// --- losses --------------------------------------------------------------------------------------

template <typename F>
double worst_gradient_error(std::vector<AttentionMap> maps, const std::vector<Matrix>& analytic, F f) {
    const double h = 1e-6;
    double worst = 0.0;
    for (size_t m = 0; m < maps.size(); ++m)
        for (Eigen::Index i = 0; i < maps[m].rows(); ++i)
            for (Eigen::Index j = 0; j < maps[m].cols(); ++j) {
                const double saved = maps[m].probs(i, j);
                maps[m].probs(i, j) = saved + h;
                const double up = f(maps);
                maps[m].probs(i, j) = saved - h;
                const double down = f(maps);
                maps[m].probs(i, j) = saved;
                const double fd = (up - down) / (2 * h);
                const double an = analytic[m](i, j);
                const double scale = std::max(std::abs(fd), std::abs(an));
                worst = std::max(worst, scale < 1e-6 ? std::abs(fd - an) : std::abs(fd - an) / scale);
            }
    return worst;
}

void loss_criterion(Check& c) {
    Rng rng(1003);
    for (int k = 1; k < 1000; ++k) {
        const double p = k / 1000.0;
        c.require(std::abs(losses::focal_term(p, 1, 0.0) + std::log(p)) < 1e-9, "gamma 0 differs from BCE (label 1)");
        c.require(std::abs(losses::focal_term(p, 0, 0.0) + std::log(1.0 - p)) < 1e-9, "gamma 0 differs from BCE (label 0)");
    }

    const SpatialDims big{16, 16};
    const TokenLayout layout = TokenLayout::for_text(4, 16);
    const auto chars = column_strips(big, 4);
    for (int trial = 0; trial < 20; ++trial) {
        const double gamma = uniform(rng, 0.0, 3.0);
        const std::vector<AttentionMap> cross{random_cross_map(rng, big, 16), random_cross_map(rng, big, 16)};
        c.require(std::abs(losses::content_loss(cross, layout, chars, gamma).value -
                           static_cast<double>(content_oracle(cross, layout, chars, gamma))) < 1e-6,
                  "content loss differs from the oracle");

        const LatentMask ref = random_latent_mask(rng, big, 0.3);
        LatentMask target = random_latent_mask(rng, big, 0.3);
        target.values(0, 0) = 1.0;
        const losses::StyleTarget gt = losses::style_target(ref);
        AttentionMap exact = random_self_map(rng, big);
        for (int i = 0; i < big.cells(); ++i)
            if (target.active(i)) exact.probs.row(i) = gt.distribution.transpose();
        const std::vector<AttentionMap> same{exact};
        c.require(std::abs(losses::style_loss(same, target, gt).value) < 1e-9, "style loss of GT is not zero");
        const std::vector<AttentionMap> self{random_self_map(rng, big), random_self_map(rng, big)};
        const double v = losses::style_loss(self, target, gt).value;
        c.require(v >= 0.0, "style loss is negative");
        c.require(std::abs(v - static_cast<double>(style_oracle(self, target, gt.distribution))) < 1e-6,
                  "style loss differs from the oracle");
    }

    const SpatialDims d{3, 4};
    const TokenLayout small = TokenLayout::for_text(2, 8);
    const auto small_chars = column_strips(d, 2);
    for (int trial = 0; trial < 100; ++trial) {
        const double gamma = uniform(rng, 0.0, 3.0);
        const std::vector<AttentionMap> cross{random_cross_map(rng, d, 8), random_cross_map(rng, d, 8)};
        c.require(worst_gradient_error(cross, losses::content_loss(cross, small, small_chars, gamma).grads,
                                       [&](const std::vector<AttentionMap>& m) {
                                           return losses::content_loss(m, small, small_chars, gamma).value;
                                       }) < 1e-4,
                  "content gradient differs from finite differences");
        const LatentMask ref = random_latent_mask(rng, d, 0.5);
        LatentMask target = random_latent_mask(rng, d, 0.5);
        target.values(0, 0) = 1.0;
        const losses::StyleTarget gt = losses::style_target(ref);
        const std::vector<AttentionMap> self{random_self_map(rng, d), random_self_map(rng, d)};
        c.require(worst_gradient_error(self, losses::style_loss(self, target, gt).grads,
                                       [&](const std::vector<AttentionMap>& m) { return losses::style_loss(m, target, gt).value; }) <
                      1e-4,
                  "style gradient differs from finite differences");
    }
}

// --- masks and grid ------------------------------------------------------------------------------

std::string random_word(Rng& rng, int min_len, int max_len) {
    static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    std::string s;
    const int n = uniform_int(rng, min_len, max_len);
    for (int i = 0; i < n; ++i) s += alphabet[static_cast<size_t>(uniform_int(rng, 0, 61))];
    return s;
}

bool pixel_subset(const Image& a, const Image& b) {
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            if (mask_on(a, x, y) && !mask_on(b, x, y)) return false;
    return true;
}

void mask_criterion(Check& c) {
    Rng rng(1004);
    const masks::CharWidthPriors priors = masks::CharWidthPriors::standard();
    for (int trial = 0; trial < 500; ++trial) {
        // Character strips.
        const LatentMask latent = random_latent_mask(rng, {6, 16}, uniform(rng, 0.2, 0.9));
        if (latent.count() > 0) {
            const std::string text = random_word(rng, 1, 8);
            const auto strips = masks::split_character_masks(latent, text);
            Matrix sum = Matrix::Zero(6, 16);
            for (const LatentMask& s : strips) sum += s.values;
            c.require(sum.maxCoeff() <= 1.0, "strips overlap");
            c.require(sum == latent.binarized().values, "strip union differs from the mask");
            const masks::BoundingBox box = masks::bounding_box(latent);
            const int n = static_cast<int>(text.size());
            int x = box.x0;
            for (int k = 0; k < n; ++k) {
                const int wk = box.width() / n + (k < box.width() % n ? 1 : 0);
                for (int y = 0; y < 6; ++y)
                    for (int xx = 0; xx < 16; ++xx)
                        if (strips[static_cast<size_t>(k)].values(y, xx) > 0)
                            c.require(xx >= x && xx < x + wk, "strip outside its allotted columns");
                x += wk;
            }
        }

        // Shrinking.
        const int w = 64, h = 32;
        const int x0 = uniform_int(rng, 0, 40), y0 = uniform_int(rng, 0, 20);
        const int x1 = uniform_int(rng, x0 + 1, w), y1 = uniform_int(rng, y0 + 1, h);
        Image m = rect_mask(w, h, x0, y0, x1, y1);
        for (int k = 0; k < 20 && x1 - x0 > 1; ++k) m.at(uniform_int(rng, x0 + 1, x1 - 1), uniform_int(rng, y0, y1 - 1)) = 0;
        const std::string src = random_word(rng, 1, 10), dst = random_word(rng, 1, 10);
        const masks::ShrunkMask s = masks::shrink_mask(m, src, dst, priors, {4, 8});
        c.require(pixel_subset(s.pixel, m), "shrunk mask is not a subset");
        c.require(masks::shrink_mask(s.pixel, dst, dst, priors, {4, 8}).pixel == s.pixel, "shrink is not idempotent");
        c.require(masks::shrink_mask(m, src, src, priors, {4, 8}).pixel == m, "same text changed the mask");
    }
    const Image pocket = rect_mask(128, 64, 16, 16, 112, 48);
    const masks::ShrunkMask flash = masks::shrink_mask(pocket, "POCKET", "FLASH", priors, {8, 16});
    c.require(masks::bounding_box(flash.pixel).width() < masks::bounding_box(pocket).width(), "POCKET to FLASH not narrower");
    c.require(flash.ratio < 1.0, "POCKET to FLASH ratio not below 1");
}

void grid_criterion(Check& c) {
    Rng rng(1005);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = uniform_int(rng, 1, 8), w = uniform_int(rng, 1, 8);
        const Latent removed = gaussian_latent(4, h, w, 10 + static_cast<std::uint64_t>(trial));
        const Latent ref = gaussian_latent(4, h, w, 5000 + static_cast<std::uint64_t>(trial));
        const Latent noise = gaussian_latent(4, h, w, 9000 + static_cast<std::uint64_t>(trial));
        const LatentMask m_shr = random_latent_mask(rng, {h, w}, 0.5);
        const grid::GridCanvas canvas = grid::assemble_grid(removed, ref, m_shr, noise);
        const grid::SlotRect t = canvas.target_slot;
        c.require(crop_latent(canvas.grid_clean_latent, t.x, t.y, t.width, t.height) == removed, "clean latent target slot");
        c.require(crop_latent(canvas.grid_noise, t.x, t.y, t.width, t.height) == noise, "noise target slot");
        c.require(canvas.grid_latent_mask.values.block(t.y, t.x, t.height, t.width) == m_shr.values, "target slot mask");
        const grid::SlotRect r = canvas.reference_slot;
        c.require(canvas.grid_latent_mask.values.block(r.y, r.x, r.height, r.width).isZero(0.0), "reference slot mask not zero");

        // Pixel level: a decoded grid cropped at the target slot gives back the target image.
        const int f = 8;
        const Image left = random_image(rng, w * f, h * f, 3);
        const Image right = random_image(rng, w * f, h * f, 3);
        Image grid_image(2 * w * f, h * f, 3);
        for (int y = 0; y < h * f; ++y)
            for (int x = 0; x < w * f; ++x)
                for (int ch = 0; ch < 3; ++ch) {
                    grid_image.at(x, y, ch) = left.at(x, y, ch);
                    grid_image.at(x + w * f, y, ch) = right.at(x, y, ch);
                }
        c.require(grid::crop_grid_result(grid_image, t.scaled(f)) == left, "pixel crop of the target slot");
    }
}

// --- sampling ------------------------------------------------------------------------------------

void ddpm_criterion(Check& c) {
    const pipeline::NoiseSchedule s = pipeline::NoiseSchedule::scaled_linear();
    const Latent z0 = gaussian_latent(4, 8, 8, 1);
    const Latent zero(4, 8, 8);
    for (int t : {1, 251, 501, 951}) {
        const Latent a = pipeline::init_latent(z0, t, zero, s);
        c.require(a.values == std::sqrt(s.alpha_bar(t)) * z0.values, "zero-noise closed form");
    }
    const pipeline::NoiseSchedule identity({1.0, 0.5});
    c.require(pipeline::init_latent(z0, 0, gaussian_latent(4, 8, 8, 2), identity).values == z0.values, "unit alpha closed form");

    const int n = 10000;
    const double base = 0.8;
    for (int t : {1, 251, 501, 951}) {
        const double a = s.alpha_bar(t);
        const Latent eps = gaussian_latent(1, 100, 100, 77 + static_cast<std::uint64_t>(t));
        const Latent zt = pipeline::init_latent(Latent(1, 100, 100, Matrix::Constant(n, 1, base)), t, eps, s);
        const double mean = zt.values.mean();
        const double var = (zt.values.array() - mean).square().sum() / (n - 1);
        c.require(std::abs(mean - std::sqrt(a) * base) < 3.0 * std::sqrt((1 - a) / n), "sample mean");
        c.require(std::abs(var - (1 - a)) < 3.0 * (1 - a) * std::sqrt(2.0 / (n - 1)), "sample variance");
    }
}

void pipeline_criterion(Check& c) {
    auto session = pipeline::make_stub_backbone(0);
    const pipeline::HookSiteConfig& sites = session->profile().sites;
    c.require(sites.sai.size() == 1, "SAI site count");
    c.require(sites.car.size() == 2, "CAR site count");

    ApplicationInputs in;
    in.task = TaskKind::editing;
    in.image = test_card(128, 64, 3);
    in.mask = rect_mask(128, 64, 16, 16, 112, 48);
    in.source_text = "POCKET";
    in.target_text = "FLASH";
    in.seed = 42;
    SessionRunner runner(*session);
    const ApplicationResult a = run_application(in, runner);

    for (const auto& site : sites.sai) c.require(a.removal_accounting.sai.at(site) == 10, "SAI fires on 10 of 20 steps");
    for (const auto& site : sites.car) c.require(a.removal_accounting.car.at(site) == 20, "CAR fires on 20 of 20 steps");
    c.require(a.removal_accounting.denoise_steps == 20, "removal steps");
    c.require(a.inpainting_accounting.denoise_steps == 20, "inpainting steps");
    c.require(a.inpainting_accounting.opt_steps == std::vector<int>{0, 4, 8}, "optimization steps");
    c.require(a.inpainting_accounting.opt_iterations == std::vector<int>{20, 20, 20}, "optimization iterations");
    c.require(a.trace.size() == 60, "loss trace length");
    c.require(a.output.width == 128 && a.output.height == 64, "output size");

    auto fresh = pipeline::make_stub_backbone(0);
    SessionRunner again(*fresh);
    const ApplicationResult b = run_application(in, again);
    c.require(a.output == b.output, "editing output not bit-identical");
    c.require(*a.removal == *b.removal, "removal output not bit-identical");
}

// --- evaluation ----------------------------------------------------------------------------------

class ExactRecognizer final : public eval::Recognizer {
public:
    explicit ExactRecognizer(std::map<std::string, std::string> readings) : readings_(std::move(readings)) {}
    std::optional<std::string> recognize(const std::string& id, const Image&) override { return readings_.at(id); }

private:
    std::map<std::string, std::string> readings_;
};

void eval_criterion(Check& c) {
    Rng rng(1008);
    for (int trial = 0; trial < 50; ++trial) {
        const int w = uniform_int(rng, 4, 48), h = uniform_int(rng, 4, 48);
        const Image out = random_image(rng, w, h, 3), in = random_image(rng, w, h, 3), mask = random_image(rng, w, h, 1);
        const Image comp = eval::composite_with_input(out, in, mask);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < 3; ++ch)
                    c.require(comp.at(x, y, ch) == (mask_on(mask, x, y) ? out : in).at(x, y, ch), "composite partition");
    }

    std::vector<eval::EvalCase> cases;
    std::vector<Image> outputs;
    std::map<std::string, std::string> readings;
    for (int i = 0; i < 4; ++i) {
        eval::EvalCase ec;
        ec.id = "c" + std::to_string(i);
        ec.ground_truth = test_card(96, 64, static_cast<std::uint64_t>(50 + i));
        ec.mask = rect_mask(96, 64, 8, 8, 80, 40);
        // The input differs from the ground truth only inside the text region.
        ec.input = eval::composite_with_input(test_card(96, 64, static_cast<std::uint64_t>(i)), ec.ground_truth, ec.mask);
        ec.target_text = "WORD" + std::to_string(i);
        readings[ec.id] = ec.target_text;
        outputs.push_back(ec.ground_truth);
        cases.push_back(std::move(ec));
    }
    ExactRecognizer recognizer(readings);
    for (TaskKind task : {TaskKind::removal, TaskKind::editing}) {
        const eval::MetricsReport r = eval::evaluate_task(cases, outputs, task, &recognizer);
        c.require(r.mse == 0.0, "identity mse");
        c.require(std::abs(r.ms_ssim - 1.0) < 1e-12, "identity ms-ssim");
        if (task != TaskKind::removal) {
            c.require(r.acc && *r.acc == 100.0, "identity acc");
            c.require(r.ned && *r.ned == 1.0, "identity ned");
        }
    }

    for (int trial = 0; trial < 20; ++trial) {
        const double v = uniform(rng, 0.0, 0.9);
        const eval::Channels a(3, Matrix::Constant(24, 24, v)), b(3, Matrix::Constant(24, 24, v + 0.1));
        c.require(std::abs(eval::psnr(a, b) - 20.0) < 1e-6, "0.1 offset PSNR");
    }

    for (int trial = 0; trial < 200; ++trial) {
        const int w = uniform_int(rng, 16, 200), h = uniform_int(rng, 16, 160);
        const int x0 = uniform_int(rng, 0, w - 1), y0 = uniform_int(rng, 0, h - 1);
        const int x1 = uniform_int(rng, x0 + 1, w), y1 = uniform_int(rng, y0 + 1, h);
        const int min_side = trial % 2 == 0 ? 64 : 96;
        const Image mask = rect_mask(w, h, x0, y0, x1, y1);
        const eval::ZoomCrop z = eval::zoom_crop(test_card(w, h), mask, min_side);
        const masks::BoundingBox after = masks::bounding_box(z.mask);
        c.require(std::min(after.width(), after.height()) >= min_side, "zoomed mask short side below the minimum");
        c.require(count_mask_pixels(z.mask) == static_cast<std::size_t>(z.scale * z.scale) * count_mask_pixels(mask),
                  "mask pixels lost by the crop");
    }
}

}  // namespace

int main() {
    bool ok = true;
    ok &= run("SAI oracle equivalence", 5.0, sai_criterion);
    ok &= run("CAR exactness", 2.0, car_criterion);
    ok &= run("Focal/KL loss correctness", 30.0, loss_criterion);
    ok &= run("Mask algebra", 5.0, mask_criterion);
    ok &= run("Grid round trip", 2.0, grid_criterion);
    ok &= run("DDPM init", 10.0, ddpm_criterion);
    ok &= run("Pipeline schedule accounting", 60.0, pipeline_criterion);
    ok &= run("Eval protocol", 60.0, eval_criterion);
    return ok ? 0 : 1;
}
