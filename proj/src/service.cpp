#include "toad/service.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "toad/api.hpp"
#include "toad/checkpoint.hpp"

namespace toad::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kLockName = ".lock";
constexpr const char* kRequestName = "request.json";

std::string random_id(const char* prefix) {
    static std::mutex mutex;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(mutex);
    std::ostringstream out;
    out << prefix << std::hex;
    out.width(12);
    out.fill('0');
    out << (rng() & 0xffffffffffffull);
    return out.str();
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

bool pid_alive(long pid) {
    if (pid <= 0) return false;
    return ::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM;
}

std::optional<long> lock_owner(const fs::path& path) {
    std::ifstream in(path);
    long pid = 0;
    if (in >> pid) return pid;
    return std::nullopt;
}

}  // namespace

std::string to_string(JobKind kind) {
    switch (kind) {
        case JobKind::train: return "train";
        case JobKind::generate: return "generate";
        case JobKind::evaluate: return "evaluate";
    }
    return "train";
}

std::string to_string(JobState state) {
    switch (state) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
        case JobState::cancelled: return "cancelled";
    }
    return "queued";
}

JobKind job_kind_from_string(const std::string& s) {
    if (s == "train") return JobKind::train;
    if (s == "generate") return JobKind::generate;
    if (s == "evaluate") return JobKind::evaluate;
    throw Error("unknown job kind '" + s + "'");
}

JobState job_state_from_string(const std::string& s) {
    if (s == "queued") return JobState::queued;
    if (s == "running") return JobState::running;
    if (s == "done") return JobState::done;
    if (s == "failed") return JobState::failed;
    if (s == "cancelled") return JobState::cancelled;
    throw Error("unknown job state '" + s + "'");
}

bool valid_transition(JobState from, JobState to) {
    if (from == JobState::queued) return to == JobState::running;
    if (from == JobState::running) return to == JobState::done || to == JobState::failed || to == JobState::cancelled;
    return false;
}

json JobRecord::to_json() const {
    return {{"job_id", id},       {"kind", to_string(kind)}, {"state", to_string(state)},
            {"model_id", model_id}, {"progress", progress},  {"artifacts", artifacts},
            {"error", error},     {"history", history},      {"detail", detail}};
}

JobRecord JobRecord::from_json(const json& doc) {
    JobRecord rec;
    rec.id = doc.at("job_id").get<std::string>();
    rec.kind = job_kind_from_string(doc.at("kind").get<std::string>());
    rec.state = job_state_from_string(doc.at("state").get<std::string>());
    rec.model_id = doc.value("model_id", "");
    rec.progress = doc.value("progress", 0.0);
    rec.artifacts = doc.value("artifacts", std::vector<std::string>{});
    rec.error = doc.value("error", "");
    rec.history = doc.value("history", std::vector<std::string>{});
    rec.detail = doc.value("detail", json::object());
    return rec;
}

// ---- JobStore ----

JobStore::JobStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

void JobStore::persist(const JobRecord& rec) const {
    write_file_atomic(dir_ / (rec.id + ".json"), rec.to_json().dump(2) + "\n");
}

void JobStore::recover() {
    std::lock_guard lock(mutex_);
    jobs_.clear();
    for (const auto& entry : fs::directory_iterator(dir_)) {
        const auto& path = entry.path();
        if (path.extension() != ".json" || path.stem().extension() != "") continue;
        try {
            auto rec = JobRecord::from_json(json::parse(read_file(path)));
            if (rec.state == JobState::queued || rec.state == JobState::running) {
                if (rec.state == JobState::queued) {
                    rec.state = JobState::running;
                    rec.history.push_back("running");
                }
                rec.state = JobState::failed;
                rec.history.push_back("failed");
                rec.error = "interrupted by a service restart";
                persist(rec);
            }
            jobs_[rec.id] = std::move(rec);
        } catch (const std::exception&) {
            // Not a job record.
        }
    }
}

JobRecord JobStore::create(JobKind kind, const std::string& model_id, json detail) {
    JobRecord rec;
    rec.id = random_id("j-");
    rec.kind = kind;
    rec.model_id = model_id;
    rec.history = {"queued"};
    rec.detail = std::move(detail);
    std::lock_guard lock(mutex_);
    persist(rec);
    jobs_[rec.id] = rec;
    return rec;
}

std::optional<JobRecord> JobStore::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

std::vector<JobRecord> JobStore::list() const {
    std::lock_guard lock(mutex_);
    std::vector<JobRecord> out;
    for (const auto& [id, rec] : jobs_) out.push_back(rec);
    return out;
}

JobRecord JobStore::transition(const std::string& id, JobState to, const std::string& error) {
    std::lock_guard lock(mutex_);
    auto& rec = jobs_.at(id);
    if (!valid_transition(rec.state, to))
        throw Error("job " + id + " cannot move from " + to_string(rec.state) + " to " + to_string(to));
    rec.state = to;
    rec.history.push_back(to_string(to));
    if (to == JobState::done) rec.progress = 1.0;
    if (!error.empty()) rec.error = error;
    persist(rec);
    return rec;
}

void JobStore::set_progress(const std::string& id, double progress, const json& detail, bool persist_now) {
    std::lock_guard lock(mutex_);
    auto& rec = jobs_.at(id);
    rec.progress = progress;
    for (const auto& [k, v] : detail.items()) rec.detail[k] = v;
    if (persist_now) persist(rec);
}

void JobStore::set_artifacts(const std::string& id, std::vector<std::string> artifacts) {
    std::lock_guard lock(mutex_);
    auto& rec = jobs_.at(id);
    rec.artifacts = std::move(artifacts);
    persist(rec);
}

// ---- ModelLock ----

std::optional<ModelLock> ModelLock::acquire(const fs::path& path) {
    for (int attempt = 0; attempt < 2; ++attempt) {
        const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd >= 0) {
            const auto text = std::to_string(::getpid()) + "\n";
            const auto written = ::write(fd, text.data(), text.size());
            ::close(fd);
            if (written != static_cast<ssize_t>(text.size())) {
                fs::remove(path);
                throw Error("cannot write lock file " + path.string());
            }
            return ModelLock(path);
        }
        if (errno != EEXIST) throw Error("cannot create lock file " + path.string());
        if (is_held(path)) return std::nullopt;
        std::error_code ec;
        fs::remove(path, ec);
    }
    return std::nullopt;
}

bool ModelLock::is_held(const fs::path& path) {
    std::error_code ec;
    if (!fs::exists(path, ec)) return false;
    const auto owner = lock_owner(path);
    if (!owner) {
        // The owner may be between creating and writing the file.
        const auto age = fs::file_time_type::clock::now() - fs::last_write_time(path, ec);
        return !ec && age < std::chrono::seconds(5);
    }
    return pid_alive(*owner);
}

ModelLock::ModelLock(ModelLock&& other) noexcept : path_(std::move(other.path_)) { other.path_.clear(); }

ModelLock& ModelLock::operator=(ModelLock&& other) noexcept {
    if (this != &other) {
        release();
        path_ = std::move(other.path_);
        other.path_.clear();
    }
    return *this;
}

ModelLock::~ModelLock() { release(); }

void ModelLock::release() {
    if (path_.empty()) return;
    std::error_code ec;
    fs::remove(path_, ec);
    path_.clear();
}

fs::path resolve_data_dir(const std::optional<fs::path>& explicit_dir, const fs::path& fallback) {
    if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
    if (const char* env = std::getenv("TOAD_DATA_DIR"); env && *env) return env;
    return fallback;
}

// ---- Service ----

namespace {

class HttpError : public Error {
public:
    HttpError(int status, const std::string& message, json detail = json::object())
        : Error(message), status(status), detail(std::move(detail)) {}
    int status;
    json detail;
};

bool valid_model_id(const std::string& id) {
    static const std::regex pattern("[A-Za-z0-9][A-Za-z0-9_.-]{0,63}");
    return std::regex_match(id, pattern) && id.find("..") == std::string::npos;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(2) + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message, json detail = json::object()) {
    json body{{"error", message}};
    if (!detail.empty()) body["detail"] = std::move(detail);
    send_json(res, status, body);
}

json request_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw HttpError(400, std::string("invalid JSON body: ") + e.what());
    }
}

json query_json(const httplib::Request& req) {
    json out = json::object();
    for (const auto& [k, v] : req.params) out[k] = v;
    return out;
}

// Multipart training uploads: "level" (file or field), "alphabet" (id or JSON),
// "config" (JSON merged into the body), and plain fields such as "name".
json multipart_body(const httplib::Request& req) {
    json body = json::object();
    for (const auto& [key, part] : req.files) {
        if (key == "config") {
            try {
                body.update(json::parse(part.content));
            } catch (const json::parse_error& e) {
                throw HttpError(400, std::string("invalid config JSON: ") + e.what());
            }
        } else if (key == "alphabet" && !part.content.empty() && part.content.front() == '{') {
            try {
                body["alphabet"] = json::parse(part.content);
            } catch (const json::parse_error& e) {
                throw HttpError(400, std::string("invalid alphabet JSON: ") + e.what());
            }
        } else if (key == "reduce_alphabet" || key == "overwrite") {
            body[key] = part.content == "true" || part.content == "1";
        } else {
            body[key] = part.content;
        }
    }
    return body;
}

}  // namespace

struct Service::Impl {
    explicit Impl(const ServiceConfig& cfg)
        : config(cfg), jobs(cfg.data_dir / "jobs"), job_pool(static_cast<std::size_t>(std::max(1, cfg.job_threads))) {}

    ServiceConfig config;
    JobStore jobs;
    httplib::Server server;
    httplib::ThreadPool job_pool;

    std::mutex mutex;
    std::condition_variable cv;
    std::deque<std::string> train_queue;
    std::map<std::string, ModelLock> locks;  // model id -> lock of its live training job
    std::map<std::string, std::shared_ptr<std::atomic<bool>>> cancel_flags;
    std::map<std::string, std::shared_ptr<const CascadeModel>> cache;
    bool stopping = false;
    std::thread worker;
    std::atomic<bool> listening{false};
    std::atomic<bool> stop_requested{false};

    fs::path models_dir() const { return config.data_dir / "models"; }
    fs::path model_dir(const std::string& id) const { return models_dir() / id; }
    std::string relative(const fs::path& p) const { return fs::relative(p, config.data_dir).generic_string(); }

    void clear_stale_locks() {
        std::error_code ec;
        if (!fs::exists(models_dir(), ec)) return;
        for (const auto& entry : fs::directory_iterator(models_dir())) {
            const auto lock = entry.path() / kLockName;
            if (!fs::exists(lock, ec)) continue;
            const auto owner = lock_owner(lock);
            // No job of this process is live yet, so a lock naming our own pid is left over too.
            if (!owner || *owner == ::getpid() || !pid_alive(*owner)) fs::remove(lock, ec);
        }
    }

    std::shared_ptr<std::atomic<bool>> flag_for(const std::string& job_id) {
        std::lock_guard lock(mutex);
        auto& flag = cancel_flags[job_id];
        if (!flag) flag = std::make_shared<std::atomic<bool>>(false);
        return flag;
    }

    void drop_flag(const std::string& job_id) {
        std::lock_guard lock(mutex);
        cancel_flags.erase(job_id);
    }

    std::optional<std::string> live_job(const std::string& model_id) const {
        for (const auto& rec : jobs.list())
            if (rec.kind == JobKind::train && rec.model_id == model_id &&
                (rec.state == JobState::queued || rec.state == JobState::running))
                return rec.id;
        return std::nullopt;
    }

    std::shared_ptr<const CascadeModel> model(const std::string& id) {
        if (!valid_model_id(id) || !fs::is_directory(model_dir(id))) throw HttpError(404, "unknown model '" + id + "'");
        {
            std::lock_guard lock(mutex);
            if (auto it = cache.find(id); it != cache.end()) return it->second;
        }
        if (!has_checkpoint(model_dir(id))) throw HttpError(409, "model '" + id + "' has no trained scales yet");
        auto loaded = std::make_shared<const CascadeModel>(load_checkpoint(model_dir(id)));
        if (!loaded->trained()) throw HttpError(409, "model '" + id + "' is still training");
        std::lock_guard lock(mutex);
        cache[id] = loaded;
        return loaded;
    }

    void invalidate(const std::string& id) {
        std::lock_guard lock(mutex);
        cache.erase(id);
    }

    // ---- training worker ----

    void worker_loop() {
        for (;;) {
            std::string job_id;
            {
                std::unique_lock lock(mutex);
                cv.wait(lock, [&] { return stopping || !train_queue.empty(); });
                if (stopping) return;
                job_id = train_queue.front();
                train_queue.pop_front();
            }
            run_training(job_id);
        }
    }

    void finish_training(const std::string& model_id) {
        std::lock_guard lock(mutex);
        locks.erase(model_id);
    }

    void run_training(const std::string& job_id) {
        const auto rec = jobs.get(job_id);
        if (!rec) return;
        const auto model_id = rec->model_id;
        if (rec->state != JobState::queued) return;  // cancelled while queued
        auto flag = flag_for(job_id);
        jobs.transition(job_id, JobState::running);
        const auto dir = model_dir(model_id);
        try {
            const auto spec = api::parse_train_request(json::parse(read_file(dir / kRequestName)));
            const int total = spec.schedule.size();
            const int steps = spec.train.steps_per_scale;
            auto last_persist = std::chrono::steady_clock::now();
            TrainHooks hooks;
            hooks.cancel = flag.get();
            hooks.on_step = [&](int scale, int step, int per_scale) {
                const double progress = (static_cast<double>(scale) * per_scale + step) / (static_cast<double>(total) * per_scale);
                const auto now = std::chrono::steady_clock::now();
                const bool persist = now - last_persist > std::chrono::seconds(1) || step == per_scale;
                if (persist) last_persist = now;
                jobs.set_progress(job_id, progress, {{"scale", scale}, {"step", step}}, persist);
            };
            hooks.on_scale_trained = [&](const CascadeModel& partial) {
                save_checkpoint(partial, dir);
                invalidate(model_id);
            };
            jobs.set_progress(job_id, 0.0, {{"total_scales", total}, {"steps_per_scale", steps}}, true);
            const auto model = train_cascade(spec.level, spec.alphabet, spec.schedule, spec.net, spec.train, hooks);
            std::vector<std::string> artifacts{relative(dir / kManifestName)};
            for (int i = 0; i < total; ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "scale_%02d.bin", i);
                artifacts.push_back(relative(dir / name));
            }
            jobs.set_artifacts(job_id, artifacts);
            jobs.transition(job_id, JobState::done);
        } catch (const Interrupted& e) {
            jobs.transition(job_id, JobState::cancelled, e.what());
        } catch (const std::exception& e) {
            jobs.transition(job_id, JobState::failed, e.what());
        }
        invalidate(model_id);
        drop_flag(job_id);
        finish_training(model_id);
    }

    // ---- pooled jobs ----

    template <typename Fn>
    void submit(const std::string& job_id, Fn fn) {
        auto flag = flag_for(job_id);
        job_pool.enqueue([this, job_id, flag, fn = std::move(fn)]() mutable {
            const auto rec = jobs.get(job_id);
            if (!rec || rec->state != JobState::queued) {
                drop_flag(job_id);
                return;
            }
            jobs.transition(job_id, JobState::running);
            try {
                jobs.set_artifacts(job_id, fn());
                jobs.transition(job_id, flag->load() ? JobState::cancelled : JobState::done);
            } catch (const std::exception& e) {
                jobs.transition(job_id, JobState::failed, e.what());
            }
            drop_flag(job_id);
        });
    }

    std::vector<std::string> write_result(const std::string& job_id, const json& result, const std::string* level) {
        std::vector<std::string> artifacts;
        const auto json_path = jobs.dir() / (job_id + ".result.json");
        write_file_atomic(json_path, result.dump(2) + "\n");
        artifacts.push_back(relative(json_path));
        if (level) {
            const auto text_path = jobs.dir() / (job_id + ".level.txt");
            write_file_atomic(text_path, *level);
            artifacts.push_back(relative(text_path));
        }
        return artifacts;
    }

    // ---- handlers ----

    template <typename Fn>
    httplib::Server::Handler guard(Fn fn) {
        return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const HttpError& e) {
                send_error(res, e.status, e.what(), e.detail);
            } catch (const UnknownToken& e) {
                send_error(res, 400, e.what(),
                           {{"type", "UnknownToken"}, {"symbol", std::string(1, e.symbol)}, {"row", e.row}, {"col", e.col}});
            } catch (const RaggedInput& e) {
                send_error(res, 400, e.what(), {{"type", "RaggedInput"}});
            } catch (const api::BadRequest& e) {
                send_error(res, 400, e.what());
            } catch (const MaskShapeMismatch& e) {
                send_error(res, 422, e.what(),
                           {{"type", "MaskShapeMismatch"}, {"expected_height", e.expected_h}, {"expected_width", e.expected_w}});
            } catch (const ShapeTooSmall& e) {
                send_error(res, 422, e.what(), {{"type", "ShapeTooSmall"}});
            } catch (const api::Unprocessable& e) {
                send_error(res, 422, e.what());
            } catch (const PatternTooLarge& e) {
                send_error(res, 422, e.what());
            } catch (const UntrainedModel& e) {
                send_error(res, 409, e.what());
            } catch (const json::exception& e) {
                send_error(res, 400, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        };
    }

    void post_models(const httplib::Request& req, httplib::Response& res) {
        json body = req.is_multipart_form_data() ? multipart_body(req) : request_json(req);
        if (!body.is_object()) throw HttpError(400, "request body must be a JSON object");
        const std::string id = body.contains("name") ? body["name"].get<std::string>() : random_id("m-");
        if (!valid_model_id(id)) throw HttpError(400, "invalid model name '" + id + "'");
        body["name"] = id;
        const auto spec = api::parse_train_request(body);
        const bool overwrite = body.value("overwrite", false);

        const auto dir = model_dir(id);
        std::unique_lock lock(mutex);
        if (locks.count(id)) throw HttpError(409, "model '" + id + "' is owned by a live training job");
        fs::create_directories(dir);
        auto acquired = ModelLock::acquire(dir / kLockName);
        if (!acquired) throw HttpError(409, "model '" + id + "' is locked by another process");
        if (has_checkpoint(dir) && !overwrite) {
            acquired->release();
            throw HttpError(409, "model '" + id + "' already exists; pass overwrite to retrain it");
        }
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.path().filename() != kLockName) fs::remove_all(entry.path());
        cache.erase(id);
        write_file_atomic(dir / kRequestName, body.dump(2) + "\n");
        locks.emplace(id, std::move(*acquired));
        lock.unlock();

        const auto rec = jobs.create(JobKind::train, id,
                                     {{"total_scales", spec.schedule.size()}, {"steps_per_scale", spec.train.steps_per_scale}});
        {
            std::lock_guard guard_lock(mutex);
            train_queue.push_back(rec.id);
        }
        cv.notify_one();
        send_json(res, 202,
                  {{"job_id", rec.id},
                   {"model_id", id},
                   {"schedule", spec.schedule.factors},
                   {"alphabet", spec.alphabet.to_json()},
                   {"height", spec.level.height()},
                   {"width", spec.level.width()}});
    }

    json model_entry(const std::string& id) {
        const auto dir = model_dir(id);
        json entry{{"model_id", id}, {"trained", false}, {"trained_scales", 0}};
        if (has_checkpoint(dir)) {
            const auto manifest = json::parse(read_file(dir / kManifestName));
            entry["trained_scales"] = manifest.value("trained_scales", 0);
            entry["total_scales"] = manifest.value("total_scales", 0);
            entry["trained"] = manifest.value("trained_scales", 0) == manifest.value("total_scales", -1);
            entry["alphabet"] = manifest.value("alphabet", json());
            entry["schedule"] = manifest.value("schedule", json());
            if (manifest.contains("training_level")) {
                entry["train_height"] = manifest["training_level"].value("height", 0);
                entry["train_width"] = manifest["training_level"].value("width", 0);
            }
        }
        if (auto job = live_job(id)) entry["job_id"] = *job;
        return entry;
    }

    void get_models(const httplib::Request&, httplib::Response& res) {
        json list = json::array();
        std::error_code ec;
        if (fs::exists(models_dir(), ec)) {
            std::vector<std::string> ids;
            for (const auto& entry : fs::directory_iterator(models_dir()))
                if (entry.is_directory()) ids.push_back(entry.path().filename().string());
            std::sort(ids.begin(), ids.end());
            for (const auto& id : ids) list.push_back(model_entry(id));
        }
        send_json(res, 200, {{"models", list}});
    }

    void get_model(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!valid_model_id(id) || !fs::is_directory(model_dir(id))) throw HttpError(404, "unknown model '" + id + "'");
        auto entry = model_entry(id);
        if (entry["trained"].get<bool>()) {
            const auto m = model(id);
            entry["summary"] = api::model_summary(*m);
            entry["injection_dims"] = api::injection_dims(*m, m->train_height, m->train_width, -1);
        }
        send_json(res, 200, entry);
    }

    void get_injection_dims(const httplib::Request& req, httplib::Response& res) {
        const auto m = model(req.matches[1]);
        const auto q = query_json(req);
        auto num = [&](const char* key, int fallback) {
            if (!q.contains(key)) return fallback;
            try {
                return std::stoi(q[key].get<std::string>());
            } catch (const std::exception&) {
                throw HttpError(400, std::string("'") + key + "' must be an integer");
            }
        };
        send_json(res, 200,
                  api::injection_dims(*m, num("height", m->train_height), num("width", m->train_width), num("scale_index", -1)));
    }

    void post_generate(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto m = model(id);
        const auto body = request_json(req);
        const auto parsed = api::parse_generation(body, *m);
        const auto& g = parsed.request;
        const long cells = static_cast<long>(g.target_h.value_or(m->train_height)) * g.target_w;
        cascade_dims(*m, g.target_h.value_or(m->train_height), g.target_w);

        if (cells > config.sync_cell_limit || body.value("async", false)) {
            const auto rec = jobs.create(JobKind::generate, id, {{"seed", g.rng_seed}, {"cells", cells}});
            submit(rec.id, [this, m, g, job_id = rec.id] {
                const auto result = g.injection ? generate_with_injection(*m, g) : generate(*m, g);
                const auto out = api::generation_json(*m, g, result);
                const auto level = out["level"].get<std::string>();
                return write_result(job_id, out, &level);
            });
            send_json(res, 202, {{"job_id", rec.id}, {"model_id", id}, {"seed", g.rng_seed}});
            return;
        }
        const auto result = g.injection ? generate_with_injection(*m, g) : generate(*m, g);
        auto out = api::generation_json(*m, g, result);
        if (req.get_param_value("format") == "text") {
            res.status = 200;
            res.set_header("X-Toad-Seed", std::to_string(g.rng_seed));
            res.set_content(out["level"].get<std::string>(), "text/plain");
            return;
        }
        out["model_id"] = id;
        send_json(res, 200, out);
    }

    void get_metrics(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto m = model(id);
        const auto params = api::parse_metrics_params(query_json(req));
        auto report = api::metrics_report(*m, params);
        report["model_id"] = id;
        send_json(res, 200, report);
    }

    void post_evaluate(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto m = model(id);
        auto body = request_json(req);
        if (!body.is_object()) throw HttpError(400, "request body must be a JSON object");
        const auto params = api::parse_metrics_params(body);
        const auto rec = jobs.create(JobKind::evaluate, id, {{"seed", params.seed}});
        submit(rec.id, [this, m, params, id, job_id = rec.id] {
            auto report = api::metrics_report(*m, params);
            report["model_id"] = id;
            return write_result(job_id, report, nullptr);
        });
        send_json(res, 202, {{"job_id", rec.id}, {"model_id", id}});
    }

    void get_jobs(const httplib::Request& req, httplib::Response& res) {
        const auto model_filter = req.get_param_value("model_id");
        json list = json::array();
        for (const auto& rec : jobs.list())
            if (model_filter.empty() || rec.model_id == model_filter) list.push_back(rec.to_json());
        send_json(res, 200, {{"jobs", list}});
    }

    JobRecord job(const std::string& id) {
        auto rec = jobs.get(id);
        if (!rec) throw HttpError(404, "unknown job '" + id + "'");
        return *rec;
    }

    void get_job(const httplib::Request& req, httplib::Response& res) { send_json(res, 200, job(req.matches[1]).to_json()); }

    void get_job_result(const httplib::Request& req, httplib::Response& res) {
        const auto rec = job(req.matches[1]);
        if (rec.state != JobState::done) throw HttpError(409, "job '" + rec.id + "' is " + to_string(rec.state));
        const auto path = jobs.dir() / (rec.id + ".result.json");
        if (!fs::exists(path)) throw HttpError(404, "job '" + rec.id + "' has no result document");
        res.status = 200;
        res.set_content(read_file(path), "application/json");
    }

    void post_cancel(const httplib::Request& req, httplib::Response& res) {
        auto rec = job(req.matches[1]);
        if (rec.state == JobState::queued) {
            // A queued job still passes through running so the state machine stays linear.
            try {
                jobs.transition(rec.id, JobState::running);
                rec = jobs.transition(rec.id, JobState::cancelled, "cancelled before start");
                if (rec.kind == JobKind::train) {
                    std::lock_guard lock(mutex);
                    train_queue.erase(std::remove(train_queue.begin(), train_queue.end(), rec.id), train_queue.end());
                    locks.erase(rec.model_id);
                }
            } catch (const Error&) {
                rec = job(rec.id);  // a worker picked it up in between
            }
        }
        if (rec.state == JobState::running) {
            flag_for(rec.id)->store(true);
            send_json(res, 202, {{"job_id", rec.id}, {"state", "running"}, {"cancel_requested", true}});
            return;
        }
        if (rec.state == JobState::cancelled) {
            send_json(res, 200, rec.to_json());
            return;
        }
        throw HttpError(409, "job '" + rec.id + "' already finished as " + to_string(rec.state));
    }

    void get_alphabets(const httplib::Request&, httplib::Response& res) {
        json list = json::array();
        for (const auto& id : bundled_alphabet_ids()) list.push_back({{"id", id}, {"alphabet", bundled_alphabet(id)->to_json()}});
        send_json(res, 200, {{"alphabets", list}});
    }

    void get_alphabet(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto a = bundled_alphabet(id);
        if (!a) throw HttpError(404, "unknown alphabet '" + id + "'");
        send_json(res, 200, a->to_json());
    }

    void routes() {
        auto& s = server;
        s.Get("/health", guard([](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); }));
        s.Get("/alphabets", guard([this](const auto& q, auto& r) { get_alphabets(q, r); }));
        s.Get(R"(/alphabets/([^/]+))", guard([this](const auto& q, auto& r) { get_alphabet(q, r); }));
        s.Post("/models", guard([this](const auto& q, auto& r) { post_models(q, r); }));
        s.Get("/models", guard([this](const auto& q, auto& r) { get_models(q, r); }));
        s.Get(R"(/models/([^/]+))", guard([this](const auto& q, auto& r) { get_model(q, r); }));
        s.Get(R"(/models/([^/]+)/injection-dims)", guard([this](const auto& q, auto& r) { get_injection_dims(q, r); }));
        s.Post(R"(/models/([^/]+)/generate)", guard([this](const auto& q, auto& r) { post_generate(q, r); }));
        s.Get(R"(/models/([^/]+)/metrics)", guard([this](const auto& q, auto& r) { get_metrics(q, r); }));
        s.Post(R"(/models/([^/]+)/evaluate)", guard([this](const auto& q, auto& r) { post_evaluate(q, r); }));
        s.Get("/jobs", guard([this](const auto& q, auto& r) { get_jobs(q, r); }));
        s.Get(R"(/jobs/([^/]+))", guard([this](const auto& q, auto& r) { get_job(q, r); }));
        s.Get(R"(/jobs/([^/]+)/result)", guard([this](const auto& q, auto& r) { get_job_result(q, r); }));
        s.Post(R"(/jobs/([^/]+)/cancel)", guard([this](const auto& q, auto& r) { post_cancel(q, r); }));
        if (!config.ui_dir.empty() && fs::is_directory(config.ui_dir)) s.set_mount_point("/ui", config.ui_dir.string());
        s.set_payload_max_length(config.max_body_bytes);
        const auto threads = static_cast<std::size_t>(std::max(1, config.http_threads));
        s.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    }
};

Service::Service(ServiceConfig config) : config_(std::move(config)) {
    fs::create_directories(config_.data_dir / "models");
    if (config_.ui_dir.empty()) config_.ui_dir = config_.data_dir / "ui";
    impl_ = std::make_unique<Impl>(config_);
    impl_->jobs.recover();
    impl_->clear_stale_locks();
    impl_->routes();
    impl_->worker = std::thread([this] { impl_->worker_loop(); });
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Service::listen() {
    impl_->listening = true;
    if (!impl_->stop_requested) impl_->server.listen_after_bind();
    impl_->listening = false;
}

bool Service::running() const { return impl_->server.is_running(); }

void Service::stop() {
    if (!impl_) return;
    impl_->stop_requested = true;
    impl_->server.stop();
    // listen() may be starting up concurrently; stop() is a no-op until it runs.
    while (impl_->listening) {
        impl_->server.stop();
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    {
        std::lock_guard lock(impl_->mutex);
        if (impl_->stopping) return;
        impl_->stopping = true;
        for (auto& [id, flag] : impl_->cancel_flags) flag->store(true);
    }
    impl_->cv.notify_all();
    if (impl_->worker.joinable()) impl_->worker.join();
    impl_->job_pool.shutdown();
    std::lock_guard lock(impl_->mutex);
    impl_->locks.clear();
}

std::optional<JobRecord> Service::wait_for_job(const std::string& id, double timeout_seconds) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
    for (;;) {
        auto rec = impl_->jobs.get(id);
        if (!rec) return std::nullopt;
        if (rec->state != JobState::queued && rec->state != JobState::running) return rec;
        if (std::chrono::steady_clock::now() > deadline) return rec;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
}

}  // namespace toad::service
