#pragma once

#include "mpipe/metrics.hpp"
#include "mpipe/pipeline.hpp"
#include "mpipe/seqdata.hpp"
#include "mpipe/text.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <vector>

namespace mpipe::exec {

namespace fs = std::filesystem;

enum class TaskState { Pending, Queued, Running, Succeeded, Failed };

std::string_view to_string(TaskState s);
std::optional<TaskState> task_state_from(std::string_view s);
bool is_terminal(TaskState s);

enum class FailureKind { BackendFailed, NonzeroExit, MissingOutput, LogError, Timeout };

std::string_view to_string(FailureKind k);

struct FailureReason {
    FailureKind kind = FailureKind::BackendFailed;
    std::string detail;

    bool operator==(const FailureReason&) const = default;
};

struct Task {
    std::string task_id;
    std::string stage_id;
    std::optional<int> part;
    std::string command;
    fs::path workdir;
    std::vector<fs::path> expected_outputs;
    std::string log_glob;
    double base_time_s = 1.0;
    TaskState state = TaskState::Pending;
    std::optional<FailureReason> failure;
    std::optional<int> exit_code;
};

struct JobSubmission {
    std::string job_id;
    std::string user = "mpipe";
    int requested_cores = 1;
    std::vector<Task> tasks;
    std::uint64_t submit_seq = 0;
};

struct BackendHandle {
    std::string id;
    auto operator<=>(const BackendHandle&) const = default;
};

enum class BackendState { Queued, Running, Done, Failed };

struct TaskPoll {
    BackendState state = BackendState::Queued;
    std::optional<int> exit_code;
    std::optional<double> started;
    std::optional<double> finished;
    std::string detail;
};

class BackendUnavailable : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

/// Execution backend contract. Implementations must tolerate concurrent polls.
class Backend {
public:
    virtual ~Backend() = default;
    virtual int capacity() const = 0;
    virtual BackendHandle submit(const JobSubmission& job) = 0;
    virtual std::map<std::string, TaskPoll> poll(const BackendHandle& handle) = 0;
    virtual void cancel(const BackendHandle& handle) = 0;
    /// Seconds on the backend's clock (wall time or virtual time).
    virtual double now() const = 0;
};

struct LedgerEvent {
    std::string task_id;
    double timestamp = 0.0;
    TaskState old_state = TaskState::Pending;
    TaskState new_state = TaskState::Pending;
    std::string reason;
};

std::string to_jsonl(const LedgerEvent& e);
std::vector<LedgerEvent> read_ledger(std::istream& in);
std::vector<metrics::LedgerRow> ledger_rows(std::span<const LedgerEvent> events);

/// An illegal state transition was requested.
class StateError : public Error {
public:
    using Error::Error;
};

/// Serialized store for every job and task; each transition is appended to an
/// optional JSONL ledger.
class JobStore {
public:
    JobStore() = default;
    explicit JobStore(const fs::path& ledger_path);

    /// Registers a submitted job and binds it to `handle`.
    void add(JobSubmission job, const BackendHandle& handle);
    std::uint64_t next_seq();

    void transition(const std::string& task_id, TaskState to, double timestamp,
                    std::optional<FailureReason> failure = std::nullopt,
                    std::optional<int> exit_code = std::nullopt);

    Task task(const std::string& task_id) const;
    std::vector<Task> tasks(const BackendHandle& handle) const;
    JobSubmission job(const BackendHandle& handle) const;
    std::vector<LedgerEvent> events() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, JobSubmission> jobs_;           // by handle id
    std::map<std::string, std::pair<std::string, std::size_t>> task_index_;  // task -> (handle, idx)
    std::vector<LedgerEvent> events_;
    std::ofstream ledger_;
    std::uint64_t seq_ = 0;
};

/// Workdir for part `k` of a stage: run_root/stage_id/part_k.
fs::path task_workdir(const fs::path& run_root, const std::string& stage_id, int part);

class PlanError : public Error {
public:
    using Error::Error;
};

/// One task per input (Scatter) or exactly one task (Single). Scatter stages
/// need task_inputs.size() == core_budget. Templates are fully expanded.
JobSubmission plan_stage_tasks(const pipeline::StageSpec& stage, std::span<const fs::path> task_inputs,
                               int core_budget, const fs::path& run_root);

/// Assigns job id and submit order when unset, submits, and moves every task
/// Pending -> Queued. Throws CapacityError or BackendUnavailable.
BackendHandle submit_job(JobStore& store, Backend& backend, JobSubmission job);

using FsView = std::function<bool(const fs::path&)>;
using LogView = std::function<std::vector<std::string>(const Task&)>;

/// Real filesystem existence check.
FsView filesystem_view();
/// Lines of every file matching the task's log glob.
LogView log_file_view();

/// ERROR, FATAL and "Segmentation fault", case-sensitive.
std::vector<std::regex> default_error_patterns();

struct InferredStatus {
    TaskState state = TaskState::Queued;
    std::optional<FailureReason> failure;

    bool operator==(const InferredStatus&) const = default;
};

/// Once the backend reports Done or Failed the verdict is, in order:
/// BackendFailed, NonzeroExit, MissingOutput, LogError, else Succeeded.
/// Queued and Running pass through.
InferredStatus infer_task_status(const Task& task, const FsView& fs_view, const LogView& log_view,
                                 BackendState backend_state, std::optional<int> exit_code,
                                 std::span<const std::regex> error_patterns);

class Clock {
public:
    virtual ~Clock() = default;
    virtual double now() = 0;
    virtual void sleep_for(double seconds) = 0;
};

/// std::chrono::steady_clock backed.
Clock& steady_clock();

struct WaitOptions {
    double poll_interval_s = 0.05;
    double timeout_s = 3600.0;
    std::vector<std::regex> error_patterns = default_error_patterns();
    FsView fs_view = filesystem_view();
    LogView log_view = log_file_view();
    Clock* clock = nullptr;  // steady clock when null
};

struct TaskOutcome {
    std::string task_id;
    TaskState state = TaskState::Pending;
    std::optional<FailureReason> failure;
    std::optional<int> exit_code;
    std::optional<double> started;
    std::optional<double> finished;
};

class WaitTimeout : public Error {
public:
    explicit WaitTimeout(std::vector<std::string> pending);
    const std::vector<std::string>& pending_tasks() const noexcept { return pending_; }

private:
    std::vector<std::string> pending_;
};

using WaitResult = std::map<BackendHandle, std::vector<TaskOutcome>>;

/// Polls until every task of every handle is terminal. A lost backend fails
/// its remaining tasks with BackendFailed. Throws WaitTimeout.
WaitResult wait_all(JobStore& store, Backend& backend, std::span<const BackendHandle> handles,
                    const WaitOptions& options);

struct RunOptions {
    fs::path run_root;
    std::string run_id;
    std::string user = "mpipe";
    WaitOptions wait;
};

struct StageOutcome {
    std::string stage_id;
    std::vector<TaskOutcome> tasks;
    std::vector<fs::path> products;  // gathered outputs under run_root/_results/<stage>
    double makespan_s = 0.0;
};

struct StageFailure {
    std::string stage_id;
    std::string task_id;
    FailureReason reason;
};

struct RunResult {
    std::vector<StageOutcome> stages;
    std::optional<StageFailure> failure;
    metrics::RunMetrics metrics;

    bool succeeded() const { return !failure.has_value(); }
    const StageOutcome* stage(std::string_view id) const;
};

/// Directory holding gathered stage products.
fs::path results_dir(const fs::path& run_root);

/// Runs every stage in order; Scatter stages are split, planned, submitted,
/// awaited and gathered. A failed stage stops the run and keeps the failed
/// tasks' workdirs. Throws pipeline::ConfigError for an invalid spec.
RunResult run_pipeline(const pipeline::PipelineSpec& spec, std::span<const seq::SequenceRecord> dataset,
                       Backend& backend, int core_budget, const RunOptions& options,
                       JobStore* store = nullptr);

}  // namespace mpipe::exec
