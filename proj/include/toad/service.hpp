#pragma once

// HTTP service: training jobs, generation, injection authoring and metric reports
// over one data directory.
//
// Layout:
//   <data>/models/<id>/   checkpoint, request.json and the .lock file of a live job
//   <data>/jobs/<id>.json job records; generation and evaluation artifacts sit beside them

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace toad::service {

enum class JobKind { train, generate, evaluate };
enum class JobState { queued, running, done, failed, cancelled };

std::string to_string(JobKind kind);
std::string to_string(JobState state);
JobKind job_kind_from_string(const std::string& s);
JobState job_state_from_string(const std::string& s);

// queued -> running -> {done, failed, cancelled}.
bool valid_transition(JobState from, JobState to);

struct JobRecord {
    std::string id;
    JobKind kind = JobKind::train;
    JobState state = JobState::queued;
    std::string model_id;
    double progress = 0.0;
    std::vector<std::string> artifacts;  // paths relative to the data dir
    std::string error;
    std::vector<std::string> history;    // every state the job has been in
    nlohmann::json detail = nlohmann::json::object();

    nlohmann::json to_json() const;
    static JobRecord from_json(const nlohmann::json& doc);
};

// Job records persisted one file per job; every change is written atomically.
class JobStore {
public:
    explicit JobStore(std::filesystem::path dir);

    // Loads existing records; jobs left queued or running by a previous process are failed.
    void recover();

    JobRecord create(JobKind kind, const std::string& model_id, nlohmann::json detail = nlohmann::json::object());
    std::optional<JobRecord> get(const std::string& id) const;
    std::vector<JobRecord> list() const;

    // Throws if the transition is not allowed.
    JobRecord transition(const std::string& id, JobState to, const std::string& error = {});
    void set_progress(const std::string& id, double progress, const nlohmann::json& detail, bool persist);
    void set_artifacts(const std::string& id, std::vector<std::string> artifacts);

    const std::filesystem::path& dir() const { return dir_; }

private:
    void persist(const JobRecord& rec) const;

    std::filesystem::path dir_;
    mutable std::mutex mutex_;
    std::map<std::string, JobRecord> jobs_;
};

// Exclusive lock file holding the owner's pid. A lock whose pid is gone is stale
// and gets reclaimed.
class ModelLock {
public:
    static std::optional<ModelLock> acquire(const std::filesystem::path& path);
    // True if a live process other than a stale owner holds the lock.
    static bool is_held(const std::filesystem::path& path);

    ModelLock(ModelLock&& other) noexcept;
    ModelLock& operator=(ModelLock&& other) noexcept;
    ModelLock(const ModelLock&) = delete;
    ModelLock& operator=(const ModelLock&) = delete;
    ~ModelLock();

    void release();

private:
    explicit ModelLock(std::filesystem::path path) : path_(std::move(path)) {}
    std::filesystem::path path_;
};

struct ServiceConfig {
    std::filesystem::path data_dir = "toad-data";
    std::filesystem::path ui_dir;          // served under /ui when it exists
    int http_threads = 4;                  // bounded pool for request handling
    int job_threads = 2;                   // asynchronous generate/evaluate jobs
    long sync_cell_limit = 64 * 1024;      // larger generations become jobs
    std::size_t max_body_bytes = 32u << 20;
};

// Data dir resolution: an explicit value wins, then TOAD_DATA_DIR, then the fallback.
std::filesystem::path resolve_data_dir(const std::optional<std::filesystem::path>& explicit_dir,
                                       const std::filesystem::path& fallback = "toad-data");

class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Returns the bound port (`port` 0 picks a free one).
    int bind(const std::string& host, int port);
    // Blocks until stop().
    void listen();
    void stop();
    bool running() const;

    // Blocks until the job leaves queued/running or the timeout expires.
    std::optional<JobRecord> wait_for_job(const std::string& id, double timeout_seconds);

    const ServiceConfig& config() const { return config_; }

private:
    struct Impl;
    ServiceConfig config_;
    std::unique_ptr<Impl> impl_;
};

}  // namespace toad::service
