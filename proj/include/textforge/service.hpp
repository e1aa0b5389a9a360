// SPDX-License-Identifier: Apache-2.0
#pragma once

// Local job service: a persisted FIFO queue executed by a fixed number of device slots, and the
// HTTP front end that exposes it.

#include "textforge/config.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace textforge::service {

enum class JobState { queued, running, done, failed };

const char* to_string(JobState state);
JobState parse_job_state(std::string_view name);

/// Everything needed to run one job. Input paths point at files inside the job directory.
struct JobRequest {
    TaskKind task = TaskKind::removal;
    std::filesystem::path image;
    std::filesystem::path mask;
    std::filesystem::path target_mask;
    std::filesystem::path ref_image;
    std::filesystem::path ref_mask;
    std::string source_text;
    std::string target_text;
    std::uint64_t seed = 0;
    losses::GuidanceWeights weights;
    pipeline::SamplingSchedule schedule;
    pipeline::AdamOptions adam;
    masks::ShrinkOptions shrink;
};

struct JobRecord {
    std::string id;
    std::uint64_t sequence = 0;
    JobRequest request;
    JobState state = JobState::queued;
    std::vector<JobState> history;
    double progress = 0.0;  // completed fraction of sampling steps
    std::string error;
    std::vector<std::string> artifacts;  // names relative to the artifacts directory
    std::map<std::string, double> timings;  // seconds per phase
    std::vector<std::string> warnings;
};

/// Request fields as JSON. Image fields name files; relative names resolve against `base_dir`.
/// Unset numeric fields fall back to `defaults`.
JobRequest job_request_from_json(std::string_view text, const EngineConfig& defaults, const std::filesystem::path& base_dir);
std::string job_request_to_json(const JobRequest& request);

std::string job_record_to_json(const JobRecord& record);
JobRecord job_record_from_json(std::string_view text);

struct AttentionSnapshot {
    std::string phase;
    int step = 0;
    std::string site;
    std::string label;  // token name for cross maps ("S_d", "E_d", "char0", ...), "masked_rows" for self maps
    std::string file;   // artifact name of the heatmap PNG
};

class JobService {
public:
    /// Loads persisted jobs from `<workspace>/jobs`; jobs found queued or running are queued again
    /// in submission order, with partial artifacts of running jobs removed.
    explicit JobService(EngineConfig config, bool start_workers = true);
    ~JobService();

    JobService(const JobService&) = delete;
    JobService& operator=(const JobService&) = delete;

    void start();
    /// Lets running jobs finish, then joins the workers. Queued jobs stay persisted.
    void stop();

    /// Copies the request's input files into a new job directory and queues it.
    std::string submit(const JobRequest& request);
    /// Creates an empty job directory for uploads; `submit_prepared` queues it afterwards.
    std::pair<std::string, std::filesystem::path> prepare_job();
    void submit_prepared(const std::string& id, JobRequest request);

    JobRecord status(const std::string& id);
    std::vector<JobRecord> list();
    /// Blocks until the job is done or failed, or the timeout passes.
    JobRecord wait(const std::string& id, std::chrono::milliseconds timeout);

    /// Path of an artifact of a finished job. Throws NotFoundError for unknown ids or names.
    std::filesystem::path artifact_path(const std::string& id, const std::string& name);
    std::vector<AttentionSnapshot> attention_snapshots(const std::string& id, int step);

    const EngineConfig& config() const { return config_; }
    std::filesystem::path jobs_dir() const { return config_.workspace / "jobs"; }
    std::size_t queued_count();

private:
    struct Entry {
        JobRecord record;
        std::uint64_t last_access = 0;
    };

    void worker_loop();
    void run_job(const std::string& id);
    void persist(const JobRecord& record);
    void set_state(Entry& entry, JobState state);
    void prune();
    Entry& find(const std::string& id);
    std::filesystem::path job_dir(const std::string& id) const { return jobs_dir() / id; }
    std::string new_id();

    EngineConfig config_;
    std::mutex mutex_;
    std::condition_variable queue_cv_;
    std::condition_variable state_cv_;
    std::map<std::string, Entry> jobs_;
    std::deque<std::string> queue_;
    std::vector<std::thread> workers_;
    bool stopping_ = false;
    std::uint64_t next_sequence_ = 1;
    std::uint64_t access_clock_ = 0;
};

/// HTTP front end over a JobService.
class HttpServer {
public:
    explicit HttpServer(JobService& service);
    ~HttpServer();

    /// Binds to `host:port`; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace textforge::service
