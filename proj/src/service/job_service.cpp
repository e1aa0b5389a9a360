// SPDX-License-Identifier: Apache-2.0
#include "textforge/service.hpp"

#include "textforge/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace textforge::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kStateNames[] = {"queued", "running", "done", "failed"};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot read " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_atomically(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw PipelineError("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

const char* anchor_name(masks::ShrinkAnchor a) {
    switch (a) {
    case masks::ShrinkAnchor::left: return "left";
    case masks::ShrinkAnchor::center: return "center";
    case masks::ShrinkAnchor::right: return "right";
    }
    return "left";
}

masks::ShrinkAnchor parse_anchor(const std::string& s) {
    if (s == "left") return masks::ShrinkAnchor::left;
    if (s == "center") return masks::ShrinkAnchor::center;
    if (s == "right") return masks::ShrinkAnchor::right;
    throw ValidationError("unknown shrink anchor '" + s + "'");
}

Image load_png_or_throw(const fs::path& path, const char* what) {
    if (!fs::exists(path)) throw ValidationError(std::string(what) + " file " + path.string() + " does not exist");
    try {
        return read_png(path);
    } catch (const std::exception& e) {
        throw ValidationError(std::string(what) + " file " + path.string() + " is not a readable PNG: " + e.what());
    }
}

ApplicationInputs load_inputs(const JobRequest& r, const fs::path& base) {
    auto resolve = [&](const fs::path& p) { return p.is_relative() ? base / p : p; };
    ApplicationInputs in;
    in.task = r.task;
    if (r.image.empty()) throw ValidationError("request has no image");
    if (r.mask.empty()) throw ValidationError("request has no mask");
    in.image = load_png_or_throw(resolve(r.image), "image");
    in.mask = to_gray(load_png_or_throw(resolve(r.mask), "mask"));
    if (!r.target_mask.empty()) in.target_mask = to_gray(load_png_or_throw(resolve(r.target_mask), "target mask"));
    if (!r.ref_image.empty()) in.ref_image = load_png_or_throw(resolve(r.ref_image), "reference");
    if (!r.ref_mask.empty()) in.ref_mask = to_gray(load_png_or_throw(resolve(r.ref_mask), "reference mask"));
    in.source_text = r.source_text;
    in.target_text = r.target_text;
    in.seed = r.seed;
    in.weights = r.weights;
    in.schedule = r.schedule;
    in.adam = r.adam;
    in.shrink = r.shrink;
    return in;
}

Image heatmap(const Matrix& field, int upscale) {
    const int h = static_cast<int>(field.rows()), w = static_cast<int>(field.cols());
    const double peak = field.maxCoeff();
    Image out(w * upscale, h * upscale, 1);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) {
            const double v = peak > 0.0 ? field(y / upscale, x / upscale) / peak : 0.0;
            out.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
    return out;
}

std::string token_label(const attention::TokenLayout& layout, int column) {
    if (column == layout.start_description) return "S_d";
    if (column == layout.end_description) return "E_d";
    if (column == layout.start_text) return "S_T";
    if (column == layout.end_text) return "E_T";
    return "char" + std::to_string(column - layout.start_text - 1);
}

std::string file_safe(std::string s) {
    for (char& c : s)
        if (c == '.') c = '-';
    return s;
}

/// Wraps a runner to time each component.
class TimedRunner final : public ComponentRunner {
public:
    TimedRunner(ComponentRunner& inner, std::map<std::string, double>& timings) : inner_(inner), timings_(timings) {}

    pipeline::RemovalResult remove(const Image& image, const Image& mask, const pipeline::SamplingSchedule& schedule,
                                   std::uint64_t seed) override {
        const auto t0 = std::chrono::steady_clock::now();
        auto r = inner_.remove(image, mask, schedule, seed);
        timings_["removal"] = seconds_since(t0);
        return r;
    }
    pipeline::InpaintingResult inpaint(const pipeline::InpaintingRequest& request, const pipeline::SamplingSchedule& schedule,
                                       std::uint64_t seed, const pipeline::InpaintingOptions& options) override {
        const auto t0 = std::chrono::steady_clock::now();
        auto r = inner_.inpaint(request, schedule, seed, options);
        timings_["inpainting"] = seconds_since(t0);
        return r;
    }
    SpatialDims latent_dims_for(const Image& image) const override { return inner_.latent_dims_for(image); }

private:
    static double seconds_since(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    ComponentRunner& inner_;
    std::map<std::string, double>& timings_;
};

}  // namespace

const char* to_string(JobState state) { return kStateNames[static_cast<int>(state)]; }

JobState parse_job_state(std::string_view name) {
    for (int i = 0; i < 4; ++i)
        if (name == kStateNames[i]) return static_cast<JobState>(i);
    throw ValidationError("unknown job state '" + std::string(name) + "'");
}

JobRequest job_request_from_json(std::string_view text, const EngineConfig& defaults, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed request: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("malformed request: expected a JSON object");
    JobRequest r;
    r.weights = defaults.weights;
    r.schedule = defaults.schedule;
    r.adam = defaults.adam;
    try {
        if (!doc.contains("task")) throw ValidationError("request is missing 'task'");
        r.task = parse_task(doc.at("task").get<std::string>());
        auto path_field = [&](const char* key) -> fs::path {
            if (!doc.contains(key) || doc.at(key).is_null()) return {};
            fs::path p = doc.at(key).get<std::string>();
            if (p.empty()) return {};
            return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        };
        r.image = path_field("image");
        r.mask = path_field("mask");
        r.target_mask = path_field("target_mask");
        r.ref_image = path_field("ref");
        r.ref_mask = path_field("ref_mask");
        r.source_text = doc.value("source_text", "");
        r.target_text = doc.value("target_text", doc.value("text", ""));
        r.seed = doc.value("seed", std::uint64_t{0});
        r.weights.lambda_content = doc.value("lambda_content", r.weights.lambda_content);
        r.weights.lambda_style = doc.value("lambda_style", r.weights.lambda_style);
        r.weights.gamma = doc.value("gamma", r.weights.gamma);
        r.schedule.total_steps = doc.value("steps", r.schedule.total_steps);
        r.schedule.sai_fraction = doc.value("sai_fraction", r.schedule.sai_fraction);
        r.schedule.car_fraction = doc.value("car_fraction", r.schedule.car_fraction);
        if (doc.contains("opt_stages")) r.schedule.opt_stages = doc.at("opt_stages").get<std::vector<double>>();
        r.schedule.opt_iters = doc.value("opt_iters", r.schedule.opt_iters);
        r.adam.learning_rate = doc.value("learning_rate", r.adam.learning_rate);
        if (doc.contains("anchor")) r.shrink.anchor = parse_anchor(doc.at("anchor").get<std::string>());
        r.shrink.shrink_height = doc.value("shrink_height", r.shrink.shrink_height);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed request: ") + e.what());
    }
    return r;
}

std::string job_request_to_json(const JobRequest& r) {
    json doc{{"task", to_string(r.task)},
             {"image", r.image.string()},
             {"mask", r.mask.string()},
             {"target_mask", r.target_mask.string()},
             {"ref", r.ref_image.string()},
             {"ref_mask", r.ref_mask.string()},
             {"source_text", r.source_text},
             {"target_text", r.target_text},
             {"seed", r.seed},
             {"lambda_content", r.weights.lambda_content},
             {"lambda_style", r.weights.lambda_style},
             {"gamma", r.weights.gamma},
             {"steps", r.schedule.total_steps},
             {"sai_fraction", r.schedule.sai_fraction},
             {"car_fraction", r.schedule.car_fraction},
             {"opt_stages", r.schedule.opt_stages},
             {"opt_iters", r.schedule.opt_iters},
             {"learning_rate", r.adam.learning_rate},
             {"anchor", anchor_name(r.shrink.anchor)},
             {"shrink_height", r.shrink.shrink_height}};
    return doc.dump();
}

std::string job_record_to_json(const JobRecord& rec) {
    json history = json::array();
    for (JobState s : rec.history) history.push_back(to_string(s));
    json doc{{"id", rec.id},
             {"sequence", rec.sequence},
             {"state", to_string(rec.state)},
             {"history", history},
             {"progress", rec.progress},
             {"error", rec.error},
             {"artifacts", rec.artifacts},
             {"timings", rec.timings},
             {"warnings", rec.warnings},
             {"request", json::parse(job_request_to_json(rec.request))}};
    return doc.dump(2);
}

JobRecord job_record_from_json(std::string_view text) {
    try {
        const json doc = json::parse(text);
        JobRecord rec;
        rec.id = doc.at("id").get<std::string>();
        rec.sequence = doc.at("sequence").get<std::uint64_t>();
        rec.state = parse_job_state(doc.at("state").get<std::string>());
        for (const auto& s : doc.value("history", json::array())) rec.history.push_back(parse_job_state(s.get<std::string>()));
        rec.progress = doc.value("progress", 0.0);
        rec.error = doc.value("error", "");
        rec.artifacts = doc.value("artifacts", std::vector<std::string>{});
        rec.timings = doc.value("timings", std::map<std::string, double>{});
        rec.warnings = doc.value("warnings", std::vector<std::string>{});
        rec.request = job_request_from_json(doc.at("request").dump(), EngineConfig{}, {});
        return rec;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("corrupt job record: ") + e.what());
    }
}

// ---------------------------------------------------------------------------------------------

JobService::JobService(EngineConfig config, bool start_workers) : config_(std::move(config)) {
    if (config_.workspace.empty()) throw ValidationError("job service needs a workspace directory");
    fs::create_directories(jobs_dir());

    std::vector<JobRecord> pending;
    for (const auto& entry : fs::directory_iterator(jobs_dir())) {
        const fs::path record_path = entry.path() / "job.json";
        if (!entry.is_directory() || !fs::exists(record_path)) continue;
        JobRecord rec;
        try {
            rec = job_record_from_json(read_text(record_path));
        } catch (const std::exception&) {
            continue;  // unreadable record: leave the directory alone
        }
        next_sequence_ = std::max(next_sequence_, rec.sequence + 1);
        if (rec.state == JobState::running || rec.state == JobState::queued) {
            // Interrupted or never started: start over from a clean artifacts directory.
            std::error_code ec;
            fs::remove_all(entry.path() / "artifacts", ec);
            rec.state = JobState::queued;
            rec.history = {JobState::queued};
            rec.progress = 0.0;
            rec.artifacts.clear();
            rec.timings.clear();
            rec.warnings.clear();
            persist(rec);
            pending.push_back(rec);
        }
        Entry e;
        e.record = std::move(rec);
        e.last_access = e.record.sequence;
        access_clock_ = std::max(access_clock_, e.last_access);
        jobs_[e.record.id] = std::move(e);
    }
    std::sort(pending.begin(), pending.end(), [](const JobRecord& a, const JobRecord& b) { return a.sequence < b.sequence; });
    for (const JobRecord& rec : pending) queue_.push_back(rec.id);
    if (start_workers) start();
}

JobService::~JobService() { stop(); }

void JobService::start() {
    std::lock_guard lock(mutex_);
    if (!workers_.empty()) return;
    stopping_ = false;
    for (int i = 0; i < config_.device_slots; ++i) workers_.emplace_back([this] { worker_loop(); });
}

void JobService::stop() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    queue_cv_.notify_all();
    for (std::thread& t : workers_)
        if (t.joinable()) t.join();
    workers_.clear();
}

std::string JobService::new_id() {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    char buffer[40];
    std::snprintf(buffer, sizeof buffer, "job-%06llu-%06llx", static_cast<unsigned long long>(next_sequence_),
                  static_cast<unsigned long long>(rng() & 0xFFFFFFULL));
    return buffer;
}

std::pair<std::string, fs::path> JobService::prepare_job() {
    std::lock_guard lock(mutex_);
    std::string id = new_id();
    while (jobs_.count(id) || fs::exists(job_dir(id))) id = new_id();
    ++next_sequence_;
    const fs::path dir = job_dir(id);
    fs::create_directories(dir / "inputs");
    return {id, dir};
}

std::string JobService::submit(const JobRequest& request) {
    // Validate before touching the workspace so rejected requests leave nothing behind.
    ApplicationInputs inputs = load_inputs(request, {});
    validate_inputs(inputs);
    const int f = config_.profile.downsample_factor;
    if (inputs.image.width % f != 0 || inputs.image.height % f != 0)
        throw ValidationError("image dimensions must be multiples of " + std::to_string(f));

    auto [id, dir] = prepare_job();
    JobRequest stored = request;
    auto store = [&](const Image& image, fs::path& field, const char* name) {
        if (image.empty()) {
            field.clear();
            return;
        }
        field = fs::path("inputs") / name;
        write_png(dir / field, image);
    };
    store(inputs.image, stored.image, "image.png");
    store(inputs.mask, stored.mask, "mask.png");
    store(inputs.target_mask, stored.target_mask, "target_mask.png");
    store(inputs.ref_image, stored.ref_image, "ref.png");
    store(inputs.ref_mask, stored.ref_mask, "ref_mask.png");
    submit_prepared(id, std::move(stored));
    return id;
}

void JobService::submit_prepared(const std::string& id, JobRequest request) {
    const fs::path dir = job_dir(id);
    ApplicationInputs inputs = load_inputs(request, dir);
    try {
        validate_inputs(inputs);
        const int f = config_.profile.downsample_factor;
        if (inputs.image.width % f != 0 || inputs.image.height % f != 0)
            throw ValidationError("image dimensions must be multiples of " + std::to_string(f));
    } catch (...) {
        std::error_code ec;
        fs::remove_all(dir, ec);
        throw;
    }
    {
        std::lock_guard lock(mutex_);
        Entry e;
        e.record.id = id;
        e.record.request = std::move(request);
        e.record.sequence = std::stoull(id.substr(4, id.find('-', 4) - 4));
        e.record.state = JobState::queued;
        e.record.history = {JobState::queued};
        e.last_access = ++access_clock_;
        persist(e.record);
        jobs_[id] = std::move(e);
        queue_.push_back(id);
    }
    queue_cv_.notify_one();
}

JobService::Entry& JobService::find(const std::string& id) {
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFoundError("unknown job '" + id + "'");
    return it->second;
}

JobRecord JobService::status(const std::string& id) {
    std::lock_guard lock(mutex_);
    Entry& e = find(id);
    e.last_access = ++access_clock_;
    return e.record;
}

std::vector<JobRecord> JobService::list() {
    std::lock_guard lock(mutex_);
    std::vector<JobRecord> out;
    for (const auto& [id, e] : jobs_) out.push_back(e.record);
    std::sort(out.begin(), out.end(), [](const JobRecord& a, const JobRecord& b) { return a.sequence < b.sequence; });
    return out;
}

std::size_t JobService::queued_count() {
    std::lock_guard lock(mutex_);
    return queue_.size();
}

JobRecord JobService::wait(const std::string& id, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    find(id);
    state_cv_.wait_for(lock, timeout, [&] {
        const auto it = jobs_.find(id);
        return it == jobs_.end() || it->second.record.state == JobState::done || it->second.record.state == JobState::failed;
    });
    return find(id).record;
}

fs::path JobService::artifact_path(const std::string& id, const std::string& name) {
    std::lock_guard lock(mutex_);
    Entry& e = find(id);
    e.last_access = ++access_clock_;
    const fs::path rel(name);
    for (const auto& part : rel)
        if (part == ".." || part.string().empty() || part == "/") throw NotFoundError("invalid artifact name");
    if (rel.is_absolute()) throw NotFoundError("invalid artifact name");
    const fs::path path = job_dir(id) / "artifacts" / rel;
    if (!fs::is_regular_file(path)) throw NotFoundError("job " + id + " has no artifact '" + name + "'");
    return path;
}

std::vector<AttentionSnapshot> JobService::attention_snapshots(const std::string& id, int step) {
    fs::path index;
    {
        std::lock_guard lock(mutex_);
        Entry& e = find(id);
        e.last_access = ++access_clock_;
        index = job_dir(id) / "artifacts" / "attention" / "index.json";
    }
    if (!fs::exists(index)) throw NotFoundError("job " + id + " has no attention snapshots");
    std::vector<AttentionSnapshot> out;
    const json doc = json::parse(read_text(index));
    for (const auto& s : doc) {
        if (s.at("step").get<int>() != step) continue;
        out.push_back(AttentionSnapshot{s.at("phase").get<std::string>(), step, s.at("site").get<std::string>(),
                                        s.at("label").get<std::string>(), s.at("file").get<std::string>()});
    }
    if (out.empty()) throw NotFoundError("job " + id + " has no attention snapshot for step " + std::to_string(step));
    return out;
}

void JobService::persist(const JobRecord& record) {
    const fs::path dir = job_dir(record.id);
    fs::create_directories(dir);
    write_atomically(dir / "job.json", job_record_to_json(record));
}

void JobService::set_state(Entry& entry, JobState state) {
    entry.record.state = state;
    entry.record.history.push_back(state);
    persist(entry.record);
    state_cv_.notify_all();
}

void JobService::worker_loop() {
    for (;;) {
        std::string id;
        {
            std::unique_lock lock(mutex_);
            queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.pop_front();
            const auto it = jobs_.find(id);
            if (it == jobs_.end()) continue;
            set_state(it->second, JobState::running);
        }
        run_job(id);
        std::lock_guard lock(mutex_);
        prune();
    }
}

void JobService::run_job(const std::string& id) {
    JobRequest request;
    {
        std::lock_guard lock(mutex_);
        request = find(id).record.request;
    }
    const fs::path dir = job_dir(id);
    const fs::path artifacts = dir / "artifacts";
    const fs::path attention_dir = artifacts / "attention";

    JobRecord outcome;
    try {
        ApplicationInputs inputs = load_inputs(request, dir);
        std::unique_ptr<pipeline::BackboneSession> session = pipeline::make_session(config_.profile, config_.backbone_seed);
        const int factor = session->downsample_factor();
        const SpatialDims dims = session->latent_dims_for(inputs.image);
        const attention::LatentMask job_mask = masks::to_latent_mask(inputs.mask, dims);
        const Image& tm = inputs.target_mask.empty() ? inputs.mask : inputs.target_mask;
        const attention::LatentMask target_mask = masks::to_latent_mask(tm, dims);
        const int removal_steps = needs_removal(request.task) ? request.schedule.total_steps : 0;
        const int total_steps = removal_steps + (needs_inpainting(request.task) ? request.schedule.total_steps : 0);
        const int text_chars = static_cast<int>(decode_utf8(request.target_text).size());

        fs::create_directories(attention_dir);
        json index = json::array();
        pipeline::RunObserver observer;
        observer.progress = [&](std::string_view phase, int done, int) {
            const int offset = phase == "inpainting" ? removal_steps : 0;
            std::lock_guard lock(mutex_);
            Entry& e = find(id);
            e.record.progress = total_steps > 0 ? static_cast<double>(offset + done) / total_steps : 1.0;
        };
        observer.attention = [&](std::string_view phase, int step, const pipeline::HookSite& site, const attention::AttentionMap& map) {
            const bool removal = phase == "removal";
            auto record = [&](const std::string& label, const Matrix& field) {
                const std::string file = "attention/" + std::string(phase) + "_s" + std::to_string(step) + "_" +
                                         file_safe(site.to_string()) + "_" + label + ".png";
                write_png(artifacts / file, heatmap(field, factor));
                index.push_back({{"phase", std::string(phase)}, {"step", step}, {"site", site.to_string()}, {"label", label}, {"file", file}});
            };
            if (map.kind == attention::AttentionKind::cross) {
                const auto layout = attention::TokenLayout::for_text(removal ? 0 : text_chars, static_cast<int>(map.cols()));
                for (int col = 0; col <= layout.end_text; ++col)
                    record(token_label(layout, col), attention::extract_token_field(map, layout, col));
            } else {
                const attention::LatentMask& m = removal ? job_mask : target_mask;
                const attention::LatentMask rows = map.dims == m.dims() ? m : masks::embed_mask(m, map.dims, 0);
                Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(map.cols());
                int n = 0;
                for (int i = 0; i < map.dims.cells(); ++i)
                    if (rows.active(i)) {
                        mean += map.probs.row(i);
                        ++n;
                    }
                if (n > 0) mean /= n;
                Matrix field(map.dims.height, map.dims.width);
                for (int i = 0; i < map.dims.cells(); ++i) field(i / map.dims.width, i % map.dims.width) = mean(i);
                record("masked_rows", field);
            }
        };

        SessionRunner base(*session, observer);
        TimedRunner runner(base, outcome.timings);
        DirectorySink sink(artifacts);
        const auto t0 = std::chrono::steady_clock::now();
        ApplicationResult result = run_application(inputs, runner, &sink);
        outcome.timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        write_atomically(attention_dir / "index.json", index.dump(2));
        for (const fs::path& p : sink.written()) outcome.artifacts.push_back(p.filename().string());
        outcome.warnings = result.warnings;
        outcome.state = JobState::done;
    } catch (const std::exception& e) {
        outcome.state = JobState::failed;
        outcome.error = e.what();
    }

    std::lock_guard lock(mutex_);
    Entry& e = find(id);
    e.record.timings = outcome.timings;
    e.record.artifacts = outcome.artifacts;
    e.record.warnings = outcome.warnings;
    e.record.error = outcome.error;
    if (outcome.state == JobState::done) e.record.progress = 1.0;
    e.last_access = ++access_clock_;
    set_state(e, outcome.state);
}

void JobService::prune() {
    std::vector<std::pair<std::uint64_t, std::string>> finished;
    for (const auto& [id, e] : jobs_)
        if (e.record.state == JobState::done || e.record.state == JobState::failed) finished.emplace_back(e.last_access, id);
    if (finished.size() <= config_.retention) return;
    std::sort(finished.begin(), finished.end());
    const size_t excess = finished.size() - config_.retention;
    for (size_t i = 0; i < excess; ++i) {
        std::error_code ec;
        fs::remove_all(job_dir(finished[i].second), ec);
        jobs_.erase(finished[i].second);
    }
}

}  // namespace textforge::service
