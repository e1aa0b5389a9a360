// SPDX-License-Identifier: Apache-2.0
// textforge: command-line front end for text editing, evaluation and the local job service.

#include "textforge/application.hpp"
#include "textforge/config.hpp"
#include "textforge/eval.hpp"
#include "textforge/service.hpp"

#include "CLI11.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

namespace fs = std::filesystem;
using namespace textforge;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitPipeline = 3;

struct EditFlags {
    std::string task;
    std::string image, mask, target_mask, ref, ref_mask;
    std::string source_text, text;
    std::uint64_t seed = 0;
    std::optional<double> lambda_content, lambda_style, gamma, learning_rate;
    std::optional<int> steps, opt_iters;
    std::string anchor = "left";
    bool shrink_height = false;
    std::string out = "textforge_out";
};

struct CommonFlags {
    std::string config;
    std::string profile;
    std::optional<std::uint64_t> backbone_seed;
};

EngineConfig load_config(const CommonFlags& common) {
    EngineConfig cfg = common.config.empty() ? EngineConfig{} : load_engine_config(common.config);
    if (!common.profile.empty()) cfg.profile = pipeline::BackboneProfile::load(common.profile);
    if (common.backbone_seed) cfg.backbone_seed = *common.backbone_seed;
    return cfg;
}

Image read_input(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw ValidationError(std::string(what) + " file '" + path + "' does not exist");
    try {
        return read_png(path);
    } catch (const std::exception& e) {
        throw ValidationError(std::string(what) + " file '" + path + "': " + e.what());
    }
}

masks::ShrinkAnchor parse_anchor(const std::string& s) {
    if (s == "left") return masks::ShrinkAnchor::left;
    if (s == "center") return masks::ShrinkAnchor::center;
    if (s == "right") return masks::ShrinkAnchor::right;
    throw ValidationError("unknown anchor '" + s + "'");
}

void add_edit_flags(CLI::App* cmd, EditFlags& f, bool with_task) {
    if (with_task) cmd->add_option("--task", f.task, "removal, editing, insertion, repositioning, rescaling, style_insertion or style_editing")->required();
    cmd->add_option("--image", f.image, "input PNG")->required();
    cmd->add_option("--mask", f.mask, "mask PNG, 255 marks the text region")->required();
    cmd->add_option("--target-mask", f.target_mask, "new text region for repositioning and rescaling");
    cmd->add_option("--source-text", f.source_text, "text currently inside the mask; enables mask shrinking");
    cmd->add_option("--text", f.text, "target text");
    cmd->add_option("--ref", f.ref, "style reference PNG");
    cmd->add_option("--ref-mask", f.ref_mask, "text region of the reference");
    cmd->add_option("--seed", f.seed, "sampling seed");
    cmd->add_option("--lambda-content", f.lambda_content, "content loss weight");
    cmd->add_option("--lambda-style", f.lambda_style, "style loss weight");
    cmd->add_option("--gamma", f.gamma, "focal loss exponent");
    cmd->add_option("--steps", f.steps, "sampling steps");
    cmd->add_option("--opt-iters", f.opt_iters, "optimization iterations per stage");
    cmd->add_option("--lr", f.learning_rate, "Adam learning rate");
    cmd->add_option("--anchor", f.anchor, "shrink anchor: left, center or right");
    cmd->add_flag("--shrink-height", f.shrink_height, "also shrink the mask height");
    cmd->add_option("--out", f.out, "artifact directory");
}

int run_edit(const EditFlags& f, const CommonFlags& common) {
    const EngineConfig cfg = load_config(common);
    ApplicationInputs in;
    in.task = parse_task(f.task);
    in.image = read_input(f.image, "image");
    in.mask = to_gray(read_input(f.mask, "mask"));
    if (!f.target_mask.empty()) in.target_mask = to_gray(read_input(f.target_mask, "target mask"));
    if (!f.ref.empty()) in.ref_image = read_input(f.ref, "reference");
    if (!f.ref_mask.empty()) in.ref_mask = to_gray(read_input(f.ref_mask, "reference mask"));
    in.source_text = f.source_text;
    in.target_text = f.text;
    in.seed = f.seed;
    in.weights = cfg.weights;
    in.schedule = cfg.schedule;
    in.adam = cfg.adam;
    if (f.lambda_content) in.weights.lambda_content = *f.lambda_content;
    if (f.lambda_style) in.weights.lambda_style = *f.lambda_style;
    if (f.gamma) in.weights.gamma = *f.gamma;
    if (f.steps) in.schedule.total_steps = *f.steps;
    if (f.opt_iters) in.schedule.opt_iters = *f.opt_iters;
    if (f.learning_rate) in.adam.learning_rate = *f.learning_rate;
    in.shrink.anchor = parse_anchor(f.anchor);
    in.shrink.shrink_height = f.shrink_height;
    validate_inputs(in);

    auto session = pipeline::make_session(cfg.profile, cfg.backbone_seed);
    SessionRunner runner(*session);
    DirectorySink sink(f.out);
    const ApplicationResult result = run_application(in, runner, &sink);
    for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";
    for (const fs::path& p : sink.written()) std::cout << p.string() << "\n";
    return 0;
}

struct EvalFlags {
    std::string dataset, outputs, task = "editing", recognizer_cmd, predictions, fid_cmd, report_dir = ".";
};

int run_eval(const EvalFlags& f) {
    const TaskKind task = parse_task(f.task);
    const std::vector<eval::EvalCase> cases = eval::load_dataset(f.dataset);
    const std::vector<Image> outputs = eval::load_outputs(f.outputs, cases);
    std::unique_ptr<eval::Recognizer> recognizer;
    if (!f.recognizer_cmd.empty()) recognizer = std::make_unique<eval::CommandRecognizer>(f.recognizer_cmd);
    else if (!f.predictions.empty()) recognizer = std::make_unique<eval::PredictionsFileRecognizer>(f.predictions);
    std::unique_ptr<eval::FeatureExtractor> extractor;
    if (!f.fid_cmd.empty()) extractor = std::make_unique<eval::CommandFeatureExtractor>(f.fid_cmd);

    const eval::MetricsReport report = eval::evaluate_task(cases, outputs, task, recognizer.get(), extractor.get());
    fs::create_directories(f.report_dir);
    const fs::path json_path = fs::path(f.report_dir) / "report.json";
    const fs::path md_path = fs::path(f.report_dir) / "report.md";
    std::ofstream(json_path) << eval::report_json(report) << "\n";
    std::ofstream(md_path) << eval::report_markdown(report);
    std::cout << eval::report_markdown(report);
    std::cout << json_path.string() << "\n" << md_path.string() << "\n";
    return 0;
}

struct ServeFlags {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string workspace;
    std::optional<int> slots;
};

int run_serve(const ServeFlags& f, const CommonFlags& common) {
    EngineConfig cfg = load_config(common);
    // Precedence: flag, then environment, then config file, then ./textforge_workspace.
    if (!f.workspace.empty()) cfg.workspace = f.workspace;
    else cfg.workspace = workspace_from_env(cfg.workspace.empty() ? fs::path("textforge_workspace") : cfg.workspace);
    if (f.slots) cfg.device_slots = *f.slots;

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    service::JobService jobs(cfg);
    service::HttpServer server(jobs);
    const int port = server.bind(f.host, f.port);
    std::cout << "listening on http://" << f.host << ":" << port << " (workspace " << cfg.workspace.string() << ")"
              << std::endl;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        server.stop();
    });
    server.listen();
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    jobs.stop();
    return 0;
}

struct ShrinkFlags {
    std::string mask, source_text, text, out = "shrunk_mask.png", anchor = "left";
    bool shrink_height = false;
};

int run_preview_shrink(const ShrinkFlags& f, const CommonFlags& common) {
    const EngineConfig cfg = load_config(common);
    const Image mask = to_gray(read_input(f.mask, "mask"));
    masks::ShrinkOptions options;
    options.anchor = parse_anchor(f.anchor);
    options.shrink_height = f.shrink_height;
    const int factor = cfg.profile.downsample_factor;
    const SpatialDims latent{std::max(1, mask.height / factor), std::max(1, mask.width / factor)};
    const masks::ShrunkMask shrunk =
        masks::shrink_mask(mask, f.source_text, f.text, masks::CharWidthPriors::standard(), latent, options);
    write_png(f.out, shrunk.pixel);
    std::cout << "ratio " << shrunk.ratio << "\n" << f.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"textforge: training-free text editing in images"};
    app.require_subcommand(1);
    CommonFlags common;
    app.add_option("--config", common.config, "engine configuration JSON");
    app.add_option("--profile", common.profile, "backbone profile JSON");
    app.add_option("--backbone-seed", common.backbone_seed, "seed of the stub backbone weights");

    EditFlags run_flags;
    CLI::App* run_cmd = app.add_subcommand("run", "run any task");
    add_edit_flags(run_cmd, run_flags, true);

    const std::vector<std::pair<std::string, std::string>> shortcuts = {
        {"remove", "removal"},           {"edit", "editing"},
        {"insert", "insertion"},         {"reposition", "repositioning"},
        {"rescale", "rescaling"},        {"style-insert", "style_insertion"},
        {"style-edit", "style_editing"}};
    std::vector<std::pair<CLI::App*, std::unique_ptr<EditFlags>>> shortcut_cmds;
    for (const auto& [name, task] : shortcuts) {
        auto flags = std::make_unique<EditFlags>();
        flags->task = task;
        CLI::App* cmd = app.add_subcommand(name, "run the " + task + " task");
        add_edit_flags(cmd, *flags, false);
        shortcut_cmds.emplace_back(cmd, std::move(flags));
    }

    EvalFlags eval_flags;
    CLI::App* eval_cmd = app.add_subcommand("eval", "score outputs against a dataset");
    eval_cmd->add_option("--dataset", eval_flags.dataset, "dataset directory")->required();
    eval_cmd->add_option("--outputs", eval_flags.outputs, "outputs directory")->required();
    eval_cmd->add_option("--task", eval_flags.task, "task the outputs were produced for");
    eval_cmd->add_option("--recognizer-cmd", eval_flags.recognizer_cmd, "recognizer command, {image} is replaced by a PNG path");
    eval_cmd->add_option("--predictions", eval_flags.predictions, "JSON file of precomputed readings by case id");
    eval_cmd->add_option("--fid-cmd", eval_flags.fid_cmd, "feature extractor command for FID");
    eval_cmd->add_option("--report-dir", eval_flags.report_dir, "where report.json and report.md go");

    ServeFlags serve_flags;
    CLI::App* serve_cmd = app.add_subcommand("serve", "run the local job service");
    serve_cmd->add_option("--host", serve_flags.host);
    serve_cmd->add_option("--port", serve_flags.port);
    serve_cmd->add_option("--workspace", serve_flags.workspace, "workspace root (default: $TEXTFORGE_WORKSPACE)");
    serve_cmd->add_option("--slots", serve_flags.slots, "concurrent jobs");

    ShrinkFlags shrink_flags;
    CLI::App* shrink_cmd = app.add_subcommand("preview-shrink", "shrink a mask for a shorter target text");
    shrink_cmd->add_option("--mask", shrink_flags.mask)->required();
    shrink_cmd->add_option("--source-text", shrink_flags.source_text)->required();
    shrink_cmd->add_option("--text", shrink_flags.text)->required();
    shrink_cmd->add_option("--out", shrink_flags.out);
    shrink_cmd->add_option("--anchor", shrink_flags.anchor);
    shrink_cmd->add_flag("--shrink-height", shrink_flags.shrink_height);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (run_cmd->parsed()) return run_edit(run_flags, common);
        for (const auto& [cmd, flags] : shortcut_cmds)
            if (cmd->parsed()) return run_edit(*flags, common);
        if (eval_cmd->parsed()) return run_eval(eval_flags);
        if (serve_cmd->parsed()) return run_serve(serve_flags, common);
        if (shrink_cmd->parsed()) return run_preview_shrink(shrink_flags, common);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "pipeline failure: " << e.what() << "\n";
        return kExitPipeline;
    }
    return kExitValidation;
}
