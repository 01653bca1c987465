#include "mpipe/executor.hpp"

#include <json.hpp>

#include <glob.h>

#include <algorithm>
#include <chrono>
#include <set>
#include <thread>

namespace mpipe::exec {

using pipeline::StageMode;

std::string_view to_string(TaskState s)
{
    switch (s) {
    case TaskState::Pending: return "Pending";
    case TaskState::Queued: return "Queued";
    case TaskState::Running: return "Running";
    case TaskState::Succeeded: return "Succeeded";
    case TaskState::Failed: return "Failed";
    }
    return "?";
}

std::optional<TaskState> task_state_from(std::string_view s)
{
    for (auto st : {TaskState::Pending, TaskState::Queued, TaskState::Running, TaskState::Succeeded,
                    TaskState::Failed})
        if (to_string(st) == s)
            return st;
    return std::nullopt;
}

bool is_terminal(TaskState s)
{
    return s == TaskState::Succeeded || s == TaskState::Failed;
}

std::string_view to_string(FailureKind k)
{
    switch (k) {
    case FailureKind::BackendFailed: return "BackendFailed";
    case FailureKind::NonzeroExit: return "NonzeroExit";
    case FailureKind::MissingOutput: return "MissingOutput";
    case FailureKind::LogError: return "LogError";
    case FailureKind::Timeout: return "Timeout";
    }
    return "?";
}

// ---------------------------------------------------------------- ledger

std::string to_jsonl(const LedgerEvent& e)
{
    nlohmann::ordered_json j;
    j["task_id"] = e.task_id;
    j["timestamp"] = e.timestamp;
    j["old_state"] = std::string(to_string(e.old_state));
    j["new_state"] = std::string(to_string(e.new_state));
    j["reason"] = e.reason;
    return j.dump();
}

std::vector<LedgerEvent> read_ledger(std::istream& in)
{
    std::vector<LedgerEvent> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty())
            continue;
        try {
            auto j = nlohmann::json::parse(line);
            auto from = task_state_from(j.at("old_state").get<std::string>());
            auto to = task_state_from(j.at("new_state").get<std::string>());
            if (!from || !to)
                throw ParseError(lineno, "unknown task state");
            out.push_back({j.at("task_id").get<std::string>(), j.at("timestamp").get<double>(), *from,
                           *to, j.value("reason", std::string())});
        } catch (const nlohmann::json::exception& e) {
            // A detached run may be mid-write on its last line.
            if (in.peek() == std::char_traits<char>::eof())
                break;
            throw ParseError(lineno, std::string("malformed ledger line: ") + e.what());
        }
    }
    return out;
}

std::vector<metrics::LedgerRow> ledger_rows(std::span<const LedgerEvent> events)
{
    std::vector<metrics::LedgerRow> rows;
    for (const auto& e : events)
        rows.push_back({e.task_id, e.timestamp, std::string(to_string(e.old_state)),
                        std::string(to_string(e.new_state))});
    return rows;
}

// ---------------------------------------------------------------- job store

JobStore::JobStore(const fs::path& ledger_path)
{
    if (ledger_path.has_parent_path())
        fs::create_directories(ledger_path.parent_path());
    ledger_.open(ledger_path, std::ios::app);
    if (!ledger_)
        throw Error("cannot open ledger '" + ledger_path.string() + "'");
}

std::uint64_t JobStore::next_seq()
{
    std::lock_guard lock(mu_);
    return ++seq_;
}

void JobStore::add(JobSubmission job, const BackendHandle& handle)
{
    std::lock_guard lock(mu_);
    if (jobs_.count(handle.id))
        throw StateError("handle '" + handle.id + "' already registered");
    for (std::size_t i = 0; i < job.tasks.size(); ++i) {
        if (task_index_.count(job.tasks[i].task_id))
            throw StateError("task '" + job.tasks[i].task_id + "' already registered");
    }
    for (std::size_t i = 0; i < job.tasks.size(); ++i)
        task_index_[job.tasks[i].task_id] = {handle.id, i};
    jobs_.emplace(handle.id, std::move(job));
}

namespace {

bool allowed(TaskState from, TaskState to, const std::optional<FailureReason>& failure)
{
    switch (from) {
    case TaskState::Pending: return to == TaskState::Queued;
    case TaskState::Queued:
        if (to == TaskState::Running)
            return true;
        // Lost or cancelled before the task ever ran.
        return to == TaskState::Failed && failure &&
               (failure->kind == FailureKind::BackendFailed || failure->kind == FailureKind::Timeout);
    case TaskState::Running: return to == TaskState::Succeeded || to == TaskState::Failed;
    case TaskState::Succeeded:
    case TaskState::Failed: return false;
    }
    return false;
}

}  // namespace

void JobStore::transition(const std::string& task_id, TaskState to, double timestamp,
                          std::optional<FailureReason> failure, std::optional<int> exit_code)
{
    std::lock_guard lock(mu_);
    auto it = task_index_.find(task_id);
    if (it == task_index_.end())
        throw StateError("unknown task '" + task_id + "'");
    Task& t = jobs_.at(it->second.first).tasks[it->second.second];
    if (!allowed(t.state, to, failure))
        throw StateError("task '" + task_id + "': illegal transition " + std::string(to_string(t.state)) +
                         " -> " + std::string(to_string(to)));
    if (to == TaskState::Failed && !failure)
        throw StateError("task '" + task_id + "': failure without a reason");

    LedgerEvent ev{task_id, timestamp, t.state, to, {}};
    if (failure)
        ev.reason = std::string(to_string(failure->kind)) + ": " + failure->detail;
    t.state = to;
    t.failure = std::move(failure);
    if (exit_code)
        t.exit_code = exit_code;
    events_.push_back(ev);
    if (ledger_.is_open()) {
        ledger_ << to_jsonl(ev) << '\n';
        ledger_.flush();
    }
}

Task JobStore::task(const std::string& task_id) const
{
    std::lock_guard lock(mu_);
    auto it = task_index_.find(task_id);
    if (it == task_index_.end())
        throw StateError("unknown task '" + task_id + "'");
    return jobs_.at(it->second.first).tasks[it->second.second];
}

std::vector<Task> JobStore::tasks(const BackendHandle& handle) const
{
    std::lock_guard lock(mu_);
    auto it = jobs_.find(handle.id);
    if (it == jobs_.end())
        throw StateError("unknown handle '" + handle.id + "'");
    return it->second.tasks;
}

JobSubmission JobStore::job(const BackendHandle& handle) const
{
    std::lock_guard lock(mu_);
    auto it = jobs_.find(handle.id);
    if (it == jobs_.end())
        throw StateError("unknown handle '" + handle.id + "'");
    return it->second;
}

std::vector<LedgerEvent> JobStore::events() const
{
    std::lock_guard lock(mu_);
    return events_;
}

// ---------------------------------------------------------------- planning

fs::path task_workdir(const fs::path& run_root, const std::string& stage_id, int part)
{
    return run_root / stage_id / ("part_" + std::to_string(part));
}

JobSubmission plan_stage_tasks(const pipeline::StageSpec& stage, std::span<const fs::path> task_inputs,
                               int core_budget, const fs::path& run_root)
{
    if (core_budget < 1)
        throw PlanError("core budget must be >= 1");
    const bool scatter = stage.mode == StageMode::Scatter;
    if (scatter && task_inputs.size() != static_cast<std::size_t>(core_budget))
        throw PlanError("stage '" + stage.id + "': " + std::to_string(task_inputs.size()) +
                        " partitions for a core budget of " + std::to_string(core_budget));
    if (!scatter && task_inputs.size() != 1)
        throw PlanError("single stage '" + stage.id + "' needs exactly one input");
    if (stage.expected_outputs.empty())
        throw PlanError("stage '" + stage.id + "' declares no outputs");

    JobSubmission job;
    job.requested_cores = scatter ? core_budget : stage.cores;
    std::set<fs::path> workdirs;
    const fs::path root = fs::absolute(run_root);
    for (std::size_t k = 0; k < task_inputs.size(); ++k) {
        Task t;
        t.stage_id = stage.id;
        t.workdir = task_workdir(root, stage.id, static_cast<int>(k)).lexically_normal();
        if (!workdirs.insert(t.workdir).second || fs::exists(t.workdir))
            throw PlanError("workdir collision at '" + t.workdir.string() + "'");
        t.base_time_s = stage.base_time_s;

        std::map<std::string, std::string> raw{{"workdir", t.workdir.string()},
                                               {"input", fs::absolute(task_inputs[k]).string()}};
        if (scatter) {
            t.part = static_cast<int>(k);
            t.task_id = stage.id + "." + std::to_string(k);
            raw["part"] = std::to_string(k);
        } else {
            t.task_id = stage.id;
        }
        try {
            for (const auto& tmpl : stage.expected_outputs) {
                fs::path p = pipeline::expand(tmpl, raw);
                t.expected_outputs.push_back((p.is_absolute() ? p : t.workdir / p).lexically_normal());
            }
            raw["output"] = t.expected_outputs.front().string();
            fs::path logs = pipeline::expand(stage.log_glob, raw);
            t.log_glob = (logs.is_absolute() ? logs : t.workdir / logs).string();

            std::map<std::string, std::string> quoted;
            for (const auto& [k2, v] : raw)
                quoted[k2] = text::shell_quote(v);
            t.command = pipeline::expand(stage.command_template, quoted);
        } catch (const pipeline::UnboundPlaceholder& e) {
            throw PlanError("stage '" + stage.id + "': " + e.what());
        }
        job.tasks.push_back(std::move(t));
    }
    return job;
}

BackendHandle submit_job(JobStore& store, Backend& backend, JobSubmission job)
{
    if (job.tasks.empty())
        throw PlanError("job has no tasks");
    if (job.requested_cores < 1)
        throw PlanError("job requests fewer than one core");
    if (job.requested_cores > backend.capacity())
        throw CapacityError("job requests " + std::to_string(job.requested_cores) +
                            " cores; backend capacity is " + std::to_string(backend.capacity()));
    if (job.submit_seq == 0)
        job.submit_seq = store.next_seq();
    if (job.job_id.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "job-%04llu", static_cast<unsigned long long>(job.submit_seq));
        job.job_id = buf;
    }
    for (const auto& t : job.tasks) {
        if (t.state != TaskState::Pending)
            throw StateError("task '" + t.task_id + "' is not Pending");
    }
    BackendHandle handle = backend.submit(job);
    std::vector<std::string> ids;
    for (const auto& t : job.tasks)
        ids.push_back(t.task_id);
    store.add(std::move(job), handle);
    double now = backend.now();
    for (const auto& id : ids)
        store.transition(id, TaskState::Queued, now);
    return handle;
}

// ---------------------------------------------------------------- status

FsView filesystem_view()
{
    return [](const fs::path& p) {
        std::error_code ec;
        return fs::exists(p, ec);
    };
}

LogView log_file_view()
{
    return [](const Task& task) {
        std::vector<std::string> lines;
        if (task.log_glob.empty())
            return lines;
        glob_t g{};
        if (::glob(task.log_glob.c_str(), 0, nullptr, &g) == 0) {
            for (std::size_t i = 0; i < g.gl_pathc; ++i) {
                std::ifstream in(g.gl_pathv[i]);
                std::string line;
                while (std::getline(in, line))
                    lines.push_back(line);
            }
        }
        globfree(&g);
        return lines;
    };
}

std::vector<std::regex> default_error_patterns()
{
    return {std::regex("ERROR"), std::regex("FATAL"), std::regex("Segmentation fault")};
}

InferredStatus infer_task_status(const Task& task, const FsView& fs_view, const LogView& log_view,
                                 BackendState backend_state, std::optional<int> exit_code,
                                 std::span<const std::regex> error_patterns)
{
    switch (backend_state) {
    case BackendState::Queued: return {TaskState::Queued, std::nullopt};
    case BackendState::Running: return {TaskState::Running, std::nullopt};
    case BackendState::Failed:
        return {TaskState::Failed, FailureReason{FailureKind::BackendFailed, "backend reported failure"}};
    case BackendState::Done: break;
    }
    if (!exit_code)
        return {TaskState::Failed, FailureReason{FailureKind::NonzeroExit, "no exit code reported"}};
    if (*exit_code != 0)
        return {TaskState::Failed,
                FailureReason{FailureKind::NonzeroExit, "exit code " + std::to_string(*exit_code)}};
    for (const auto& out : task.expected_outputs) {
        if (!fs_view(out))
            return {TaskState::Failed, FailureReason{FailureKind::MissingOutput, out.string()}};
    }
    for (const auto& line : log_view(task)) {
        for (const auto& re : error_patterns) {
            if (std::regex_search(line, re))
                return {TaskState::Failed, FailureReason{FailureKind::LogError, line}};
        }
    }
    return {TaskState::Succeeded, std::nullopt};
}

// ---------------------------------------------------------------- waiting

namespace {

class SteadyClock final : public Clock {
public:
    double now() override
    {
        using namespace std::chrono;
        return duration<double>(steady_clock::now().time_since_epoch()).count();
    }
    void sleep_for(double seconds) override
    {
        std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    }
};

}  // namespace

Clock& steady_clock()
{
    static SteadyClock clock;
    return clock;
}

WaitTimeout::WaitTimeout(std::vector<std::string> pending)
    : Error("timed out waiting for: " + text::join(pending, ", ")), pending_(std::move(pending))
{
}

WaitResult wait_all(JobStore& store, Backend& backend, std::span<const BackendHandle> handles,
                    const WaitOptions& options)
{
    Clock& clock = options.clock ? *options.clock : steady_clock();
    const double deadline = clock.now() + options.timeout_s;
    std::map<std::string, TaskPoll> last_poll;

    for (;;) {
        std::vector<std::string> pending;
        for (const auto& h : handles) {
            auto tasks = store.tasks(h);
            if (std::all_of(tasks.begin(), tasks.end(), [](const Task& t) { return is_terminal(t.state); }))
                continue;

            std::map<std::string, TaskPoll> polled;
            bool lost = false;
            try {
                polled = backend.poll(h);
            } catch (const BackendUnavailable& e) {
                lost = true;
                for (const auto& t : tasks) {
                    if (!is_terminal(t.state))
                        store.transition(t.task_id, TaskState::Failed, backend.now(),
                                         FailureReason{FailureKind::BackendFailed, e.what()});
                }
            }
            if (lost)
                continue;

            for (const auto& t : tasks) {
                if (is_terminal(t.state))
                    continue;
                auto it = polled.find(t.task_id);
                if (it == polled.end()) {
                    pending.push_back(t.task_id);
                    continue;
                }
                const TaskPoll& p = it->second;
                last_poll[t.task_id] = p;
                auto verdict = infer_task_status(t, options.fs_view, options.log_view, p.state,
                                                 p.exit_code, options.error_patterns);
                if (verdict.state == TaskState::Queued) {
                    pending.push_back(t.task_id);
                    continue;
                }
                if (t.state == TaskState::Queued &&
                    !(verdict.state == TaskState::Failed && p.state == BackendState::Failed && !p.started))
                    store.transition(t.task_id, TaskState::Running, p.started.value_or(backend.now()));
                if (verdict.state == TaskState::Running) {
                    pending.push_back(t.task_id);
                    continue;
                }
                if (verdict.failure && p.state == BackendState::Failed && !p.detail.empty())
                    verdict.failure->detail = p.detail;
                store.transition(t.task_id, verdict.state, p.finished.value_or(backend.now()),
                                 verdict.failure, p.exit_code);
            }
        }
        if (pending.empty())
            break;
        if (clock.now() >= deadline)
            throw WaitTimeout(std::move(pending));
        clock.sleep_for(options.poll_interval_s);
    }

    WaitResult result;
    for (const auto& h : handles) {
        auto& out = result[h];
        for (const auto& t : store.tasks(h)) {
            TaskOutcome o{t.task_id, t.state, t.failure, t.exit_code, std::nullopt, std::nullopt};
            if (auto it = last_poll.find(t.task_id); it != last_poll.end()) {
                o.started = it->second.started;
                o.finished = it->second.finished;
            }
            out.push_back(std::move(o));
        }
    }
    return result;
}

// ---------------------------------------------------------------- pipeline runs

const StageOutcome* RunResult::stage(std::string_view id) const
{
    for (const auto& s : stages)
        if (s.stage_id == id)
            return &s;
    return nullptr;
}

fs::path results_dir(const fs::path& run_root)
{
    return run_root / "_results";
}

namespace {

void remove_if_empty(const fs::path& dir)
{
    std::error_code ec;
    if (fs::is_directory(dir, ec) && fs::is_empty(dir, ec))
        fs::remove(dir, ec);
}

void move_file(const fs::path& from, const fs::path& to)
{
    fs::create_directories(to.parent_path());
    std::error_code ec;
    fs::rename(from, to, ec);
    if (ec) {
        fs::copy_file(from, to, fs::copy_options::overwrite_existing);
        fs::remove(from);
    }
}

// Sequence parts go back into the stage input's record order. Records the
// input never had (new ids) fall back to interleaving, then to part order.
void gather_sequences(const std::vector<fs::path>& parts, const fs::path& product,
                      std::span<const seq::SequenceRecord> stage_input)
{
    std::vector<seq::Partition> partitions;
    for (std::size_t k = 0; k < parts.size(); ++k)
        partitions.push_back({k, parts.size(), seq::read_sequence_file(parts[k])});

    std::map<std::string_view, std::size_t> rank;
    for (std::size_t i = 0; i < stage_input.size(); ++i)
        rank.emplace(stage_input[i].id, i);
    bool all_known = true;
    for (const auto& p : partitions)
        for (const auto& r : p.records)
            all_known = all_known && rank.count(r.id);

    std::vector<seq::SequenceRecord> merged;
    if (all_known) {
        for (auto& p : partitions)
            for (auto& r : p.records)
                merged.push_back(std::move(r));
        std::stable_sort(merged.begin(), merged.end(), [&](const auto& a, const auto& b) {
            return rank.at(a.id) < rank.at(b.id);
        });
    } else {
        try {
            merged = seq::merge_parts(partitions);
        } catch (const Error&) {
            for (auto& p : partitions)
                for (auto& r : p.records)
                    merged.push_back(std::move(r));
        }
    }
    seq::write_sequence_file(product, merged);
}

// Text parts are concatenated in part order; '#' header lines are kept once.
void gather_text(const std::vector<fs::path>& parts, const fs::path& product)
{
    std::ofstream out(product, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write '" + product.string() + "'");
    std::set<std::string> headers;
    for (const auto& part : parts) {
        std::ifstream in(part, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.front() == '#' && !headers.insert(line).second)
                continue;
            out << line << '\n';
        }
    }
}

}  // namespace

RunResult run_pipeline(const pipeline::PipelineSpec& spec, std::span<const seq::SequenceRecord> dataset,
                       Backend& backend, int core_budget, const RunOptions& options, JobStore* store)
{
    if (auto violations = pipeline::validate_spec(spec); !violations.empty())
        throw pipeline::ConfigError("invalid pipeline '" + spec.name + "'", 0, 0, std::move(violations));
    if (core_budget < 1)
        throw PlanError("core budget must be >= 1");

    const fs::path run_root = fs::absolute(options.run_root).lexically_normal();
    const fs::path results = results_dir(run_root);
    fs::create_directories(results);
    std::optional<JobStore> own_store;
    if (!store) {
        own_store.emplace(run_root / "ledger.jsonl");
        store = &*own_store;
    }

    RunResult result;
    result.metrics.run_id = options.run_id.empty() ? spec.name : options.run_id;
    result.metrics.core_count = core_budget;

    std::map<std::string, fs::path> product_of;
    const fs::path dataset_path =
        results / ("dataset" + std::string(seq::extension_for(seq::natural_format(dataset))));
    seq::write_sequence_file(dataset_path, dataset);
    product_of[std::string(pipeline::kDatasetInput)] = dataset_path;

    for (const auto& stage : spec.stages) {
        const fs::path input = product_of.at(stage.input);
        const bool scatter = stage.mode == StageMode::Scatter;

        std::vector<seq::SequenceRecord> stage_records;
        std::vector<seq::Partition> parts;
        std::vector<fs::path> task_inputs;
        if (scatter) {
            stage_records = seq::read_sequence_file(input);
            parts = seq::split_records(stage_records, static_cast<std::size_t>(core_budget));
            auto ext = input.extension().string();
            for (int k = 0; k < core_budget; ++k)
                task_inputs.push_back(task_workdir(run_root, stage.id, k) / ("input" + ext));
        } else {
            task_inputs.push_back(input);
        }

        JobSubmission job = plan_stage_tasks(stage, task_inputs, core_budget, run_root);
        job.user = options.user;
        for (std::size_t k = 0; k < job.tasks.size(); ++k) {
            fs::create_directories(job.tasks[k].workdir);
            if (scatter)
                seq::write_sequence_file(task_inputs[k], parts[k].records);
        }
        parts.clear();

        BackendHandle handle = submit_job(*store, backend, job);
        StageOutcome outcome{stage.id, {}, {}, 0.0};
        try {
            outcome.tasks = wait_all(*store, backend, std::span(&handle, 1), options.wait).at(handle);
        } catch (const WaitTimeout& e) {
            backend.cancel(handle);
            for (const auto& t : store->tasks(handle)) {
                if (!is_terminal(t.state))
                    store->transition(t.task_id, TaskState::Failed, backend.now(),
                                      FailureReason{FailureKind::Timeout, "no terminal state before timeout"});
            }
            for (const auto& t : store->tasks(handle))
                outcome.tasks.push_back({t.task_id, t.state, t.failure, t.exit_code, std::nullopt, std::nullopt});
        }

        std::optional<double> first_start, last_finish;
        auto& times = result.metrics.tool_times[stage.id];
        for (const auto& o : outcome.tasks) {
            if (o.started && o.finished) {
                times.push_back(std::max(0.0, *o.finished - *o.started));
                first_start = std::min(first_start.value_or(*o.started), *o.started);
                last_finish = std::max(last_finish.value_or(*o.finished), *o.finished);
            }
        }
        outcome.makespan_s = first_start ? *last_finish - *first_start : 0.0;
        result.metrics.stage_makespans[stage.id] = outcome.makespan_s;

        auto failed = std::find_if(outcome.tasks.begin(), outcome.tasks.end(),
                                   [](const TaskOutcome& o) { return o.state == TaskState::Failed; });
        const auto tasks = store->tasks(handle);
        if (failed != outcome.tasks.end()) {
            // Keep only the failed tasks' workdirs for diagnosis.
            for (std::size_t k = 0; k < tasks.size(); ++k) {
                if (outcome.tasks[k].state != TaskState::Failed)
                    fs::remove_all(tasks[k].workdir);
            }
            result.failure = StageFailure{stage.id, failed->task_id,
                                          failed->failure.value_or(FailureReason{FailureKind::BackendFailed, ""})};
            result.stages.push_back(std::move(outcome));
            break;
        }

        const fs::path stage_results = results / stage.id;
        std::vector<std::vector<fs::path>> per_output(stage.expected_outputs.size());
        for (std::size_t k = 0; k < tasks.size(); ++k) {
            for (std::size_t i = 0; i < tasks[k].expected_outputs.size(); ++i) {
                const auto& src = tasks[k].expected_outputs[i];
                fs::path dst = scatter ? stage_results / ("part_" + std::to_string(k)) / src.filename()
                                       : stage_results / src.filename();
                move_file(src, dst);
                per_output[i].push_back(dst);
            }
            fs::remove_all(tasks[k].workdir);
        }
        remove_if_empty(run_root / stage.id);

        for (std::size_t i = 0; i < stage.expected_outputs.size(); ++i) {
            if (!scatter) {
                outcome.products.push_back(per_output[i].front());
                continue;
            }
            fs::path product = stage_results / pipeline::product_name(stage.expected_outputs[i]);
            if (pipeline::is_sequence_path(product.string()))
                gather_sequences(per_output[i], product, stage_records);
            else
                gather_text(per_output[i], product);
            outcome.products.push_back(product);
        }
        if (scatter) {
            for (int k = 0; k < core_budget; ++k)
                fs::remove_all(stage_results / ("part_" + std::to_string(k)));
        }
        product_of[stage.id] = outcome.products.front();
        result.stages.push_back(std::move(outcome));
    }
    return result;
}

}  // namespace mpipe::exec
