#pragma once

// FIFO work queue with a single worker per device. Jobs report phases that
// only move forward, plus step progress while denoising.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <ctime>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "chromalign/bench/manifest.hpp"
#include "chromalign/core/error.hpp"

namespace chromalign {

enum class JobPhase { queued, inverting, masking, denoising, done, failed };
NLOHMANN_JSON_SERIALIZE_ENUM(JobPhase, {{JobPhase::queued, "queued"},
                                        {JobPhase::inverting, "inverting"},
                                        {JobPhase::masking, "masking"},
                                        {JobPhase::denoising, "denoising"},
                                        {JobPhase::done, "done"},
                                        {JobPhase::failed, "failed"}})

inline bool terminal(JobPhase p) { return p == JobPhase::done || p == JobPhase::failed; }

// UTC, millisecond resolution.
inline std::string iso_timestamp(std::chrono::system_clock::time_point tp) {
    const auto secs = std::chrono::time_point_cast<std::chrono::seconds>(tp);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp - secs).count();
    const std::time_t t = std::chrono::system_clock::to_time_t(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[40];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

struct PhaseStamp {
    JobPhase phase;
    std::string at;
    std::int64_t at_us = 0;  // steady clock, for ordering checks
};

struct JobStatus {
    std::string id;
    std::uint64_t seq = 0;  // submission order
    std::string kind;
    std::string device;
    std::string session;
    JobPhase phase = JobPhase::queued;
    int step = 0;   // denoising steps completed
    int total = 0;  // T
    std::string error;
    nlohmann::json error_detail;  // e.g. missing keys of a failed evaluation
    nlohmann::json result;
    nlohmann::json config;
    std::vector<PhaseStamp> history;
};

inline nlohmann::json to_json_value(const JobStatus& s) {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& p : s.history) h.push_back({{"phase", p.phase}, {"at", p.at}, {"at_us", p.at_us}});
    nlohmann::json j = {{"id", s.id},       {"seq", s.seq},         {"kind", s.kind},   {"device", s.device},
                        {"phase", s.phase}, {"progress", {{"step", s.step}, {"total", s.total}}},
                        {"history", h},     {"config", s.config}};
    if (!s.session.empty()) j["session"] = s.session;
    if (s.phase == JobPhase::failed) {
        j["error"] = s.error;
        if (!s.error_detail.is_null()) j["error_detail"] = s.error_detail;
    }
    if (s.phase == JobPhase::done) j["result"] = s.result;
    return j;
}

class JobQueue;

// Handed to a running job; the only way a job updates its own status.
class JobContext {
public:
    JobContext(JobQueue& q, std::string id) : queue_(q), id_(std::move(id)) {}
    void phase(JobPhase p);
    void progress(int step, int total);
    const std::string& id() const noexcept { return id_; }

private:
    JobQueue& queue_;
    std::string id_;
};

class JobQueue {
public:
    using Work = std::function<nlohmann::json(JobContext&)>;

    // start_delay holds every job briefly before it runs; tests use it to make
    // concurrent submissions overlap.
    explicit JobQueue(std::string device = "cpu", std::chrono::milliseconds start_delay = {})
        : device_(std::move(device)), start_delay_(start_delay), worker_([this] { run(); }) {}

    JobQueue(const JobQueue&) = delete;
    JobQueue& operator=(const JobQueue&) = delete;

    ~JobQueue() {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }

    std::string submit(std::string kind, nlohmann::json config, Work work, std::string session = {}) {
        std::lock_guard lock(mu_);
        JobStatus s;
        s.id = new_id();
        s.seq = ++seq_;
        s.kind = std::move(kind);
        s.device = device_;
        s.session = std::move(session);
        s.config = std::move(config);
        s.history.push_back(stamp(JobPhase::queued));
        const std::string id = s.id;
        jobs_.emplace(id, std::move(s));
        pending_.push_back({id, std::move(work)});
        cv_.notify_all();
        return id;
    }

    std::optional<JobStatus> status(const std::string& id) const {
        std::lock_guard lock(mu_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) return std::nullopt;
        return it->second;
    }

    // Blocks until the job is done or failed, or the timeout passes.
    std::optional<JobStatus> wait(const std::string& id, std::chrono::milliseconds timeout = std::chrono::minutes(10)) {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, timeout, [&] {
            auto it = jobs_.find(id);
            return it == jobs_.end() || terminal(it->second.phase);
        });
        auto it = jobs_.find(id);
        if (it == jobs_.end()) return std::nullopt;
        return it->second;
    }

    void wait_idle() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return pending_.empty() && !busy_; });
    }

    const std::string& device() const noexcept { return device_; }

private:
    friend class JobContext;

    struct Pending {
        std::string id;
        Work work;
    };

    static std::string new_id() {
        static std::mt19937_64 rng(std::random_device{}());
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
        return std::string("job-") + buf;
    }

    static PhaseStamp stamp(JobPhase p) {
        const auto us = std::chrono::duration_cast<std::chrono::microseconds>(
                            std::chrono::steady_clock::now().time_since_epoch()).count();
        return {p, iso_timestamp(std::chrono::system_clock::now()), us};
    }

    void set_phase(const std::string& id, JobPhase p) {
        {
            std::lock_guard lock(mu_);
            auto& s = jobs_.at(id);
            if (p == s.phase) return;
            if (terminal(s.phase) || (p != JobPhase::failed && p < s.phase))
                throw ContractError("job " + id + " cannot move from " + nlohmann::json(s.phase).get<std::string>() +
                                    " to " + nlohmann::json(p).get<std::string>());
            s.phase = p;
            s.history.push_back(stamp(p));
        }
        cv_.notify_all();
    }

    void set_progress(const std::string& id, int step, int total) {
        std::lock_guard lock(mu_);
        auto& s = jobs_.at(id);
        s.total = total;
        s.step = std::max(s.step, step);
    }

    void run() {
        for (;;) {
            Pending next;
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return stop_ || !pending_.empty(); });
                if (stop_) return;  // queued work is dropped; sessions resume from the store
                next = std::move(pending_.front());
                pending_.pop_front();
                busy_ = true;
            }
            if (start_delay_.count() > 0) std::this_thread::sleep_for(start_delay_);
            JobContext ctx(*this, next.id);
            nlohmann::json result;
            std::string error;
            nlohmann::json detail;
            try {
                result = next.work(ctx);
            } catch (const DatasetError& e) {
                error = e.what();
                detail = {{"missing", e.deviations()}};
            } catch (const ValidationError& e) {
                error = e.what();
                detail = {{"fields", e.fields()}};
            } catch (const std::exception& e) {
                error = e.what();
                if (error.empty()) error = "job failed";
            }
            {
                std::lock_guard lock(mu_);
                auto& s = jobs_.at(next.id);
                if (error.empty()) {
                    s.result = std::move(result);
                    s.phase = JobPhase::done;
                } else {
                    s.error = error;
                    s.error_detail = std::move(detail);
                    s.phase = JobPhase::failed;
                }
                s.history.push_back(stamp(s.phase));
                busy_ = false;
            }
            cv_.notify_all();
        }
    }

    std::string device_;
    std::chrono::milliseconds start_delay_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::string, JobStatus> jobs_;
    std::deque<Pending> pending_;
    std::uint64_t seq_ = 0;
    bool stop_ = false;
    bool busy_ = false;
    std::thread worker_;  // last: starts after the state above exists
};

inline void JobContext::phase(JobPhase p) { queue_.set_phase(id_, p); }
inline void JobContext::progress(int step, int total) { queue_.set_progress(id_, step, total); }

}  // namespace chromalign
