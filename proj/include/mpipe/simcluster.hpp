#pragma once

#include "mpipe/text.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace mpipe::sim {

struct SimNode {
    std::string name;
    int cores = 1;
    double slowdown = 1.0;  // >= 1; stragglers observed up to 3x
};

struct SimClusterConfig {
    std::vector<SimNode> nodes;
    std::uint64_t seed = 0;
    double service_time_jitter = 0.0;  // task time scaled by 1 + jitter * U[0,1)

    /// Throws Error on an invalid config.
    void validate() const;
    int capacity() const;
    bool has_stragglers() const;
};

enum class EventKind { JobQueued, JobStarted, TaskStarted, TaskFinished, JobFinished };

std::string_view to_string(EventKind k);

struct SimEvent {
    double time = 0.0;
    EventKind kind = EventKind::JobQueued;
    std::string job_id;
    std::string task_id;  // task events only
    int node = -1;        // task events only: index into config nodes
    int core = -1;

    bool operator==(const SimEvent&) const = default;
};

using SimEventTrace = std::vector<SimEvent>;

struct SimJob {
    std::string job_id;
    std::string user;
    int requested_cores = 1;
    std::vector<double> base_task_times;
    std::vector<std::string> task_ids;  // defaults to "<job_id>.t<k>"
    std::vector<int> allowed_nodes;     // empty: any node
    std::string tool;                   // label for reports; defaults to job_id
};

class CapacityError : public Error {
public:
    using Error::Error;
};

struct SimJobHandle {
    std::size_t index = 0;
    std::string job_id;
};

struct SimTaskStatus {
    std::string task_id;
    std::optional<double> started;
    std::optional<double> finished;
    int node = -1;
};

/// Single-threaded batch cluster with a virtual clock. Gang allocation, no
/// backfill; the queued job with the smallest (user running jobs, requested
/// cores, submit order) starts when its full request fits.
class SimCluster {
public:
    explicit SimCluster(SimClusterConfig config);

    int capacity() const { return config_.capacity(); }
    double now() const { return now_; }
    const SimClusterConfig& config() const { return config_; }

    /// Adds a job arriving at virtual time `at` (>= now).
    SimJobHandle enqueue(SimJob job, double at);

    /// Processes events up to `until` (inclusive), or until nothing is left.
    /// Returns the events emitted by this call.
    SimEventTrace advance(std::optional<double> until = std::nullopt);

    bool quiescent() const { return pending_.empty() && queued_.empty(); }
    bool job_finished(const SimJobHandle& h) const { return jobs_.at(h.index).finished; }
    std::vector<SimTaskStatus> task_status(const SimJobHandle& h) const;

    const SimEventTrace& trace() const { return trace_; }
    const SimJob& job(const SimJobHandle& h) const { return jobs_.at(h.index).spec; }

private:
    struct Pending {
        double time;
        int kind;
        std::uint64_t id;
        std::size_t job;
        std::size_t task;  // task finish only
        bool operator>(const Pending& o) const
        {
            if (time != o.time)
                return time > o.time;
            if (kind != o.kind)
                return kind > o.kind;
            return id > o.id;
        }
    };
    struct Slot {
        int node;
        int core;
    };
    struct JobState {
        SimJob spec;
        std::uint64_t seq = 0;
        double enqueued = 0.0;
        bool arrived = false;
        bool started = false;
        bool finished = false;
        std::vector<Slot> slots;
        std::size_t next_task = 0;
        std::size_t done = 0;
        std::vector<std::optional<double>> task_start, task_finish;
        std::vector<Slot> task_slot;
    };

    void emit(EventKind kind, const JobState& job, std::string task_id = {}, int node = -1,
              int core = -1);
    void start_task(std::size_t job, Slot slot);
    void finish_task(std::size_t job, std::size_t task);
    void dispatch();
    int free_cores(const JobState& job) const;
    double jitter_factor();

    SimClusterConfig config_;
    std::mt19937_64 rng_;
    double now_ = 0.0;
    std::uint64_t next_id_ = 0;
    std::vector<JobState> jobs_;
    std::vector<std::size_t> queued_;
    std::map<std::string, int> user_running_;
    // owner_[node][core] = job index + 1, 0 when idle
    std::vector<std::vector<std::size_t>> owner_;
    std::priority_queue<Pending, std::vector<Pending>, std::greater<>> pending_;
    struct Refill {
        std::size_t job;
        Slot slot;
    };
    std::vector<Refill> refill_;
    SimEventTrace trace_;
};

struct JobTiming {
    double enqueued = 0.0;
    double started = 0.0;
    double finished = 0.0;
    double exec = 0.0;        // start -> last task finish
    double wait = 0.0;        // enqueue -> start
    double turnaround = 0.0;  // wait + exec
};

/// Throws Error when the job has not finished within the trace.
JobTiming job_makespan(const SimEventTrace& trace, std::string_view job_id);

std::string trace_jsonl(const SimEventTrace& trace, const SimClusterConfig& config);

struct ScenarioJob {
    SimJob job;
    double arrival = 0.0;
};

struct Scenario {
    SimClusterConfig cluster;
    std::vector<ScenarioJob> jobs;
};

/// Same config grammar as pipelines (JSON with comments).
Scenario parse_scenario(std::string_view text);

struct ScenarioRun {
    SimEventTrace trace;
    std::vector<std::pair<SimJob, JobTiming>> jobs;  // in scenario order
};

ScenarioRun run_scenario(const Scenario& scenario);

/// Per-job `job_id tool user cores tasks wait exec turnaround` TSV.
std::string summary_tsv(const ScenarioRun& run);

}  // namespace mpipe::sim
