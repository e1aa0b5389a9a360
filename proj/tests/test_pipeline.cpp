// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "textforge/pipeline.hpp"
#include "support.hpp"

#include <cmath>
#include <limits>
#include <set>

using namespace textforge;
using namespace textforge::pipeline;
using textforge::testing::rect_mask;
using textforge::testing::test_card;

namespace {

HookSite site(const char* text) { return HookSite::parse(text); }

InpaintingRequest editing_request(BackboneSession& session, const Image& image, const Image& mask, const std::string& text) {
    InpaintingRequest req;
    req.removed_image = image;
    req.ref_image = image;
    req.ref_mask = mask;
    req.target_text = text;
    req.mask_set = masks::build_mask_set(mask, session.latent_dims_for(image), "", text, masks::CharWidthPriors::standard());
    return req;
}

}  // namespace

TEST_CASE("noise schedule: scaled linear table") {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    REQUIRE(s.train_steps() == 1000);
    long double running = 1.0L;
    for (int t = 0; t < 1000; ++t) {
        const long double root = std::sqrt(0.00085L) + (std::sqrt(0.012L) - std::sqrt(0.00085L)) * t / 999.0L;
        running *= 1.0L - root * root;
        REQUIRE(std::abs(s.alpha_bar(t) - static_cast<double>(running)) < 1e-12);
    }
    CHECK(std::abs(s.alpha_bar(0) - (1.0 - 0.00085)) < 1e-15);
    CHECK_THROWS_AS(s.alpha_bar(1000), ContractError);
    CHECK_THROWS_AS(NoiseSchedule({0.5, 1.5}), ContractError);
}

TEST_CASE("noise schedule: leading sampler timesteps") {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    const std::vector<int> ts = s.sampling_timesteps(20);
    REQUIRE(ts.size() == 20);
    CHECK(ts.front() == 951);
    CHECK(ts.back() == 1);
    for (size_t k = 1; k < ts.size(); ++k) CHECK(ts[k - 1] - ts[k] == 50);
    CHECK_THROWS_AS(s.sampling_timesteps(0), ContractError);
}

TEST_CASE("ddim_step: exact noise prediction recovers the clean latent") {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    const Latent z0 = gaussian_latent(4, 2, 3, 1);
    const Latent eps = gaussian_latent(4, 2, 3, 2);
    const Latent zt = init_latent(z0, 951, eps, s);
    const Latent prev = s.ddim_step(zt, eps, 951, 901);
    const Latent expect = init_latent(z0, 901, eps, s);
    CHECK((prev.values - expect.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("init_latent: closed forms") {
    const Latent z0 = gaussian_latent(4, 3, 3, 5);
    const Latent eps = gaussian_latent(4, 3, 3, 6);
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    const Latent zero_noise(4, 3, 3);
    const Latent a = init_latent(z0, 500, zero_noise, s);
    CHECK(a.values == std::sqrt(s.alpha_bar(500)) * z0.values);

    const NoiseSchedule identity({1.0, 0.75});
    CHECK(init_latent(z0, 0, eps, identity).values == z0.values);
    const Latent half = init_latent(Latent(4, 3, 3), 1, eps, identity);
    CHECK((half.values - 0.5 * eps.values).cwiseAbs().maxCoeff() < 1e-15);
    CHECK_THROWS_AS(init_latent(z0, 2, eps, identity), ContractError);
    CHECK_THROWS_AS(init_latent(z0, 0, gaussian_latent(4, 3, 2, 1), identity), ContractError);
}

TEST_CASE("init_latent: sample moments within three standard errors") {
    const NoiseSchedule s = NoiseSchedule::scaled_linear();
    const int n = 10000;
    const double z0 = 0.8;
    for (int t : {1, 501, 951}) {
        const double a = s.alpha_bar(t);
        const Latent eps = gaussian_latent(1, 100, 100, 42 + static_cast<std::uint64_t>(t));
        const Latent zt = init_latent(Latent(1, 100, 100, Matrix::Constant(n, 1, z0)), t, eps, s);
        const double mean = zt.values.mean();
        const double var = (zt.values.array() - mean).square().sum() / (n - 1);
        CHECK(std::abs(mean - std::sqrt(a) * z0) < 3.0 * std::sqrt((1 - a) / n));
        CHECK(std::abs(var - (1 - a)) < 3.0 * (1 - a) * std::sqrt(2.0 / (n - 1)));
    }
}

TEST_CASE("sampling schedule arithmetic") {
    SamplingSchedule s;
    CHECK(s.sai_steps() == 10);
    CHECK(s.car_steps() == 20);
    CHECK(s.opt_step_indices() == std::vector<int>{0, 4, 8});
    s.sai_fraction = 0.0;
    CHECK(s.sai_steps() == 0);
    s.total_steps = 7;
    s.sai_fraction = 0.5;
    CHECK(s.sai_steps() == 4);
    SamplingSchedule bad;
    bad.opt_stages = {0.4, 0.2};
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = SamplingSchedule{};
    bad.sai_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("gaussian_latent is seeded and standard normal") {
    CHECK(gaussian_latent(4, 8, 8, 3) == gaussian_latent(4, 8, 8, 3));
    CHECK_FALSE(gaussian_latent(4, 8, 8, 3) == gaussian_latent(4, 8, 8, 4));
    const Latent big = gaussian_latent(1, 200, 200, 9);
    CHECK(std::abs(big.values.mean()) < 0.02);
    CHECK(std::abs(big.values.squaredNorm() / 40000.0 - 1.0) < 0.03);
}

TEST_CASE("hook sites parse and print") {
    const HookSite s = site("decoder.1.2.cross");
    CHECK(s.stage == Stage::decoder);
    CHECK(s.block == 1);
    CHECK(s.layer == 2);
    CHECK(s.kind == AttentionKind::cross);
    CHECK(s.to_string() == "decoder.1.2.cross");
    CHECK(site("encoder.0.0.self").to_string() == "encoder.0.0.self");
    CHECK_THROWS_AS(site("decoder.1.cross"), ValidationError);
    CHECK_THROWS_AS(site("sideways.1.2.self"), ValidationError);
}

TEST_CASE("backbone profile: reference addresses and JSON round trip") {
    const BackboneProfile p = BackboneProfile::reference_stub();
    CHECK(p.sites.sai == std::vector<HookSite>{site("decoder.2.1.self")});
    CHECK(p.sites.car == std::vector<HookSite>{site("decoder.1.2.cross"), site("decoder.2.0.cross")});
    CHECK(p.sites.content == p.sites.car);
    CHECK(p.sites.style == std::vector<HookSite>{site("decoder.1.0.self"), site("decoder.1.1.self")});
    CHECK(p.sites.sam == std::vector<HookSite>{site("decoder.1.2.self")});

    const BackboneProfile back = BackboneProfile::from_json_text(p.to_json_text());
    CHECK(back.to_json_text() == p.to_json_text());
    CHECK_THROWS_AS(BackboneProfile::from_json_text("{\"kind\": 3}"), ValidationError);

    BackboneProfile other = p;
    other.kind = "sd2-inpaint";
    CHECK_THROWS_AS(make_session(other, 0), PipelineError);
    BackboneProfile missing = p;
    missing.sites.sai = {site("decoder.3.0.self")};
    CHECK_THROWS(make_session(missing, 0));
}

TEST_CASE("stub backbone: layout, kinds and determinism") {
    auto session = make_stub_backbone(7);
    const TextEncoding enc = session->encode_text("AB");
    CHECK(enc.layout.char_indices == std::vector<int>{3, 4});
    CHECK(enc.layout.end_text == 5);
    CHECK(enc.embedding.rows() == 24);

    const Image img = test_card(64, 32);
    CHECK(session->latent_dims_for(img) == SpatialDims{4, 8});
    CHECK_THROWS_AS(session->latent_dims_for(Image(60, 32, 3)), ValidationError);

    const Latent z = session->encode_image(img);
    const LatentMask m = masks::to_latent_mask(rect_mask(64, 32, 16, 8, 48, 24), z.dims());
    const Conditioning cond{grid::zero_masked_cells(z, m), m, enc};

    std::set<AttentionKind> kinds;
    for (const HookSite& s : session->profile().sites.car)
        session->hooks().on(s, [&kinds](const HookSite&, const AttentionMap& map) {
            kinds.insert(map.kind);
            return map;
        });
    const Latent a = session->predict_noise(z, cond, 951);
    session->hooks().clear();
    CHECK(kinds == std::set<AttentionKind>{AttentionKind::cross});

    auto twin = make_stub_backbone(7);
    CHECK(twin->predict_noise(z, cond, 951) == a);
    auto other = make_stub_backbone(8);
    CHECK_FALSE(other->predict_noise(z, cond, 951) == a);
    CHECK_THROWS_AS(session->hooks().on(site("decoder.3.0.self"), {}), ContractError);
}

TEST_CASE("stub codec round trip stays close on smooth images") {
    auto session = make_stub_backbone(1);
    const Image flat(32, 16, 3, 120);
    CHECK(session->decode_latent(session->encode_image(flat)) == flat);
}

TEST_CASE("text removal: accounting, determinism and observers") {
    auto session = make_stub_backbone(3);
    const Image img = test_card(64, 32);
    const Image mask = rect_mask(64, 32, 16, 8, 48, 24);
    int progress_calls = 0;
    std::set<std::string> seen_sites;
    RunObserver obs;
    obs.progress = [&](std::string_view, int done, int total) {
        ++progress_calls;
        CHECK(done <= total);
    };
    obs.attention = [&](std::string_view, int, const HookSite& s, const AttentionMap&) { seen_sites.insert(s.to_string()); };
    const RemovalResult r = run_text_removal(*session, img, mask, SamplingSchedule{}, 11, obs);
    CHECK(r.accounting.sai.at(site("decoder.2.1.self")) == 10);
    CHECK(r.accounting.car.at(site("decoder.1.2.cross")) == 20);
    CHECK(r.accounting.car.at(site("decoder.2.0.cross")) == 20);
    CHECK(r.accounting.denoise_steps == 20);
    CHECK(progress_calls == 20);
    CHECK(seen_sites == std::set<std::string>{"decoder.2.0.cross", "decoder.2.0.self"});
    CHECK(r.raw.width == 64);
    CHECK(r.composited == composite(r.raw, img, mask));

    const RemovalResult again = run_text_removal(*session, img, mask, SamplingSchedule{}, 11);
    CHECK(again.raw == r.raw);
    CHECK_THROWS_AS(run_text_removal(*session, img, Image(64, 32, 1), SamplingSchedule{}, 1), ValidationError);
}

TEST_CASE("text removal without hooks equals the plain sampling loop") {
    auto session = make_stub_backbone(4);
    const Image img = test_card(64, 32, 2);
    const Image mask = rect_mask(64, 32, 8, 8, 40, 24);
    SamplingSchedule sched;
    sched.sai_fraction = 0.0;
    sched.car_fraction = 0.0;
    const RemovalResult r = run_text_removal(*session, img, mask, sched, 5);
    CHECK(r.accounting.sai.at(site("decoder.2.1.self")) == 0);

    auto plain = make_stub_backbone(4);
    const Latent z0 = plain->encode_image(img);
    const LatentMask m = masks::to_latent_mask(mask, z0.dims());
    const Conditioning cond{grid::zero_masked_cells(z0, m), m, plain->encode_text("")};
    const std::vector<int> ts = plain->noise_schedule().sampling_timesteps(20);
    Latent z = init_latent(z0, ts.front(), gaussian_latent(z0.channels, z0.height, z0.width, 5), plain->noise_schedule());
    for (int k = 0; k < 20; ++k) {
        const Latent eps = plain->predict_noise(z, cond, ts[static_cast<size_t>(k)]);
        z = plain->noise_schedule().ddim_step(z, eps, ts[static_cast<size_t>(k)], k + 1 < 20 ? ts[static_cast<size_t>(k) + 1] : -1);
    }
    CHECK(plain->decode_latent(z) == r.raw);
}

TEST_CASE("controllable inpainting: accounting with the default schedule") {
    auto session = make_stub_backbone(5);
    const Image img = test_card(64, 32, 3);
    const Image mask = rect_mask(64, 32, 8, 8, 56, 24);
    const InpaintingRequest req = editing_request(*session, img, mask, "FLASH");
    const InpaintingResult r = run_controllable_inpainting(*session, req, SamplingSchedule{}, 9);
    CHECK(r.accounting.opt_steps == std::vector<int>{0, 4, 8});
    CHECK(r.accounting.opt_iterations == std::vector<int>{20, 20, 20});
    CHECK(r.accounting.sam.at(site("decoder.1.2.self")) == 60);
    for (const HookSite& s : session->profile().sites.content) CHECK(r.accounting.content.at(s) == 60);
    for (const HookSite& s : session->profile().sites.style) CHECK(r.accounting.style.at(s) == 60);
    CHECK(r.trace.size() == 60);
    CHECK(r.output.width == 64);
    CHECK(r.output.height == 32);
    CHECK(r.grid_output.width == 128);
    CHECK(r.warnings.empty());
    for (const LossSample& s : r.trace) CHECK(std::isfinite(s.total));
    // Each stage lowers the guidance loss from its first iterate.
    for (int stage = 0; stage < 3; ++stage) CHECK(r.trace[static_cast<size_t>(stage * 20 + 19)].total < r.trace[static_cast<size_t>(stage * 20)].total);
}

TEST_CASE("controllable inpainting: bit-identical across runs, canvas untouched") {
    auto session = make_stub_backbone(6);
    const Image img = test_card(64, 32, 4);
    const Image mask = rect_mask(64, 32, 8, 8, 40, 24);
    SamplingSchedule sched;
    sched.opt_iters = 5;
    const InpaintingRequest req = editing_request(*session, img, mask, "AB");
    const InpaintingResult a = run_controllable_inpainting(*session, req, sched, 21);
    const InpaintingResult b = run_controllable_inpainting(*session, req, sched, 21);
    CHECK(a.output == b.output);
    CHECK(a.grid_output == b.grid_output);

    const Latent noise = gaussian_latent(4, 4, 8, 21);
    const grid::GridCanvas expect =
        grid::assemble_grid(session->encode_image(img), session->encode_image(img), req.mask_set.shrunk_latent, noise);
    CHECK(a.canvas.grid_masked_latent == expect.grid_masked_latent);
    CHECK(a.canvas.grid_latent_mask.values == expect.grid_latent_mask.values);

    const InpaintingResult c = run_controllable_inpainting(*session, req, sched, 22);
    CHECK_FALSE(c.grid_output == a.grid_output);
}

TEST_CASE("controllable inpainting with optimization disabled equals the plain grid loop") {
    auto session = make_stub_backbone(7);
    const Image img = test_card(64, 32, 5);
    const Image mask = rect_mask(64, 32, 16, 8, 48, 24);
    InpaintingRequest req = editing_request(*session, img, mask, "HI");
    req.weights.lambda_content = 0.0;
    req.weights.lambda_style = 0.0;
    SamplingSchedule sched;
    sched.opt_iters = 0;
    const InpaintingResult r = run_controllable_inpainting(*session, req, sched, 13);
    CHECK(r.trace.empty());
    CHECK(r.accounting.sam.at(site("decoder.1.2.self")) == 0);

    auto plain = make_stub_backbone(7);
    const Latent z_img = plain->encode_image(img);
    const grid::GridCanvas canvas =
        grid::assemble_grid(z_img, z_img, req.mask_set.shrunk_latent, gaussian_latent(4, 4, 8, 13));
    const Conditioning cond{canvas.grid_masked_latent, canvas.grid_latent_mask, plain->encode_text("HI")};
    const std::vector<int> ts = plain->noise_schedule().sampling_timesteps(20);
    Latent z = init_latent(canvas.grid_clean_latent, ts.front(), canvas.grid_noise, plain->noise_schedule());
    for (int k = 0; k < 20; ++k) z = plain->step(z, cond, k, 20);
    const Image grid_img = plain->decode_latent(z);
    CHECK(grid_img == r.grid_output);
    CHECK(grid::crop_grid_result(grid_img, canvas.target_slot.scaled(8)) == r.output);
}

TEST_CASE("controllable inpainting: non-finite stage aborts with a warning and sampling continues") {
    auto session = make_stub_backbone(8);
    const Image img = test_card(64, 32, 6);
    const Image mask = rect_mask(64, 32, 8, 8, 56, 24);
    const InpaintingRequest req = editing_request(*session, img, mask, "AB");
    SamplingSchedule sched;
    sched.opt_iters = 3;
    InpaintingOptions opts;
    opts.adam.learning_rate = std::numeric_limits<double>::quiet_NaN();
    const InpaintingResult r = run_controllable_inpainting(*session, req, sched, 1, opts);
    CHECK(r.warnings.size() == 3);
    CHECK(r.accounting.opt_iterations == std::vector<int>{1, 1, 1});
    CHECK(r.output.width == 64);
}

TEST_CASE("controllable inpainting: input validation") {
    auto session = make_stub_backbone(9);
    const Image img = test_card(64, 32);
    const Image mask = rect_mask(64, 32, 8, 8, 56, 24);
    InpaintingRequest req = editing_request(*session, img, mask, "AB");
    req.target_text = "";
    CHECK_THROWS_AS(run_controllable_inpainting(*session, req, SamplingSchedule{}, 1), ValidationError);
    req = editing_request(*session, img, mask, "AB");
    req.ref_mask = Image(64, 32, 1);
    CHECK_THROWS_AS(run_controllable_inpainting(*session, req, SamplingSchedule{}, 1), ValidationError);
    req = editing_request(*session, img, mask, "AB");
    req.ref_image = test_card(32, 32);
    CHECK_THROWS_AS(run_controllable_inpainting(*session, req, SamplingSchedule{}, 1), ValidationError);
}
