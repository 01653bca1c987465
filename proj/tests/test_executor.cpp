#include "mpipe/executor.hpp"
#include "mpipe/local_backend.hpp"
#include "mpipe/sim_backend.hpp"

#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <sstream>

using namespace mpipe;
using namespace mpipe::exec;

namespace {

// Backend whose poll answers are scripted per task.
class FakeBackend final : public Backend {
public:
    int cap = 8;
    double clock = 100.0;
    bool down = false;
    std::map<std::string, std::vector<TaskPoll>> script;  // consumed front to back, last one sticks
    std::vector<std::string> cancelled;

    int capacity() const override { return cap; }
    BackendHandle submit(const JobSubmission& job) override
    {
        BackendHandle h{"fake-" + std::to_string(++n_)};
        for (const auto& t : job.tasks)
            tasks_[h.id].push_back(t.task_id);
        return h;
    }
    std::map<std::string, TaskPoll> poll(const BackendHandle& h) override
    {
        if (down)
            throw BackendUnavailable("gone");
        std::map<std::string, TaskPoll> out;
        for (const auto& id : tasks_[h.id]) {
            auto& s = script[id];
            if (s.empty())
                continue;
            out[id] = s.front();
            if (s.size() > 1)
                s.erase(s.begin());
        }
        return out;
    }
    void cancel(const BackendHandle& h) override { cancelled.push_back(h.id); }
    double now() const override { return clock; }

private:
    int n_ = 0;
    std::map<std::string, std::vector<std::string>> tasks_;
};

class FakeClock final : public Clock {
public:
    double t = 0.0;
    double now() override { return t; }
    void sleep_for(double s) override { t += s; }
};

JobSubmission job_of(std::vector<std::string> ids)
{
    JobSubmission j;
    for (auto& id : ids) {
        Task t;
        t.task_id = id;
        t.stage_id = "s";
        j.tasks.push_back(t);
    }
    return j;
}

WaitOptions fake_wait(FakeClock& clock)
{
    WaitOptions w;
    w.clock = &clock;
    w.poll_interval_s = 1.0;
    w.timeout_s = 10.0;
    w.fs_view = [](const fs::path&) { return true; };
    w.log_view = [](const Task&) { return std::vector<std::string>{}; };
    return w;
}

TaskPoll done(int code, double start, double finish)
{
    return {BackendState::Done, code, start, finish, ""};
}

pipeline::StageSpec scatter_stage()
{
    pipeline::StageSpec s;
    s.id = "count";
    s.mode = pipeline::StageMode::Scatter;
    s.command_template = "grep -c '>' {input} > {workdir}/n_{part}.txt";
    s.expected_outputs = {"{workdir}/n_{part}.txt"};
    s.input = "dataset";
    return s;
}

}  // namespace

TEST_CASE("state names round trip")
{
    for (auto s : {TaskState::Pending, TaskState::Queued, TaskState::Running, TaskState::Succeeded,
                   TaskState::Failed})
        CHECK(task_state_from(to_string(s)) == s);
    CHECK_FALSE(task_state_from("Done"));
    CHECK(is_terminal(TaskState::Failed));
    CHECK_FALSE(is_terminal(TaskState::Running));
}

TEST_CASE("store enforces the task lifecycle and writes the ledger")
{
    testing::TempDir dir("store");
    JobStore store(dir / "ledger.jsonl");
    BackendHandle h{"h1"};
    store.add(job_of({"a", "b", "c"}), h);
    CHECK_THROWS_AS(store.add(job_of({"a"}), BackendHandle{"h2"}), StateError);

    CHECK_THROWS_AS(store.transition("a", TaskState::Running, 0), StateError);
    store.transition("a", TaskState::Queued, 1);
    store.transition("a", TaskState::Running, 2);
    store.transition("a", TaskState::Succeeded, 3, std::nullopt, 0);
    CHECK_THROWS_AS(store.transition("a", TaskState::Failed, 4, FailureReason{}), StateError);

    store.transition("b", TaskState::Queued, 1);
    CHECK_THROWS_AS(store.transition("b", TaskState::Failed, 2, FailureReason{FailureKind::NonzeroExit, ""}),
                    StateError);
    store.transition("b", TaskState::Failed, 2, FailureReason{FailureKind::BackendFailed, "lost"});
    store.transition("c", TaskState::Queued, 1);
    store.transition("c", TaskState::Running, 2);
    CHECK_THROWS_AS(store.transition("c", TaskState::Failed, 3), StateError);
    CHECK_THROWS_AS(store.transition("zz", TaskState::Queued, 1), StateError);

    CHECK(store.task("a").state == TaskState::Succeeded);
    CHECK(store.task("a").exit_code == 0);
    CHECK(store.task("b").failure->kind == FailureKind::BackendFailed);

    std::ifstream in(dir / "ledger.jsonl");
    auto events = read_ledger(in);
    REQUIRE(events.size() == 7);
    CHECK(events[0].task_id == "a");
    CHECK(events[2].new_state == TaskState::Succeeded);
    CHECK(events[4].reason == "BackendFailed: lost");
    auto rows = ledger_rows(events);
    CHECK(rows[1].new_state == "Running");
    CHECK(rows[1].timestamp == 2.0);
}

TEST_CASE("ledger reader tolerates a torn last line only")
{
    std::istringstream torn(
        "{\"task_id\":\"a\",\"timestamp\":1,\"old_state\":\"Pending\",\"new_state\":\"Queued\"}\n{\"task_id\":");
    CHECK(read_ledger(torn).size() == 1);
    std::istringstream bad("{bad\n{\"task_id\":\"a\",\"timestamp\":1,\"old_state\":\"Pending\",\"new_state\":\"Queued\"}\n");
    CHECK_THROWS_AS(read_ledger(bad), ParseError);
}

TEST_CASE("planning expands templates per part")
{
    testing::TempDir dir("plan");
    auto stage = scatter_stage();
    std::vector<fs::path> inputs{dir / "in 0.fa", dir / "in1.fa", dir / "in2.fa"};
    auto job = plan_stage_tasks(stage, inputs, 3, dir.path());
    REQUIRE(job.tasks.size() == 3);
    CHECK(job.requested_cores == 3);
    const auto& t0 = job.tasks[0];
    CHECK(t0.task_id == "count.0");
    CHECK(t0.part == 0);
    CHECK(t0.workdir == dir.path() / "count" / "part_0");
    CHECK(t0.expected_outputs == std::vector<fs::path>{t0.workdir / "n_0.txt"});
    CHECK(t0.command.find("'" + (dir / "in 0.fa").string() + "'") != std::string::npos);
    CHECK(job.tasks[2].command.find("n_2.txt") != std::string::npos);
    CHECK(t0.log_glob == (t0.workdir / "*.log").string());

    CHECK_THROWS_AS(plan_stage_tasks(stage, inputs, 4, dir.path()), PlanError);
    fs::create_directories(dir.path() / "count" / "part_1");
    CHECK_THROWS_AS(plan_stage_tasks(stage, inputs, 3, dir.path()), PlanError);
}

TEST_CASE("planning a single stage")
{
    testing::TempDir dir("plan1");
    pipeline::StageSpec s;
    s.id = "sum";
    s.command_template = "wc -l {input} > {output}";
    s.expected_outputs = {"summary.txt"};
    s.cores = 4;
    s.input = "dataset";
    std::vector<fs::path> in{dir / "x.fa"};
    auto job = plan_stage_tasks(s, in, 16, dir.path());
    REQUIRE(job.tasks.size() == 1);
    CHECK(job.requested_cores == 4);
    CHECK(job.tasks[0].task_id == "sum");
    CHECK_FALSE(job.tasks[0].part);
    CHECK(job.tasks[0].expected_outputs[0] == dir.path() / "sum" / "part_0" / "summary.txt");
    CHECK(job.tasks[0].command.find(job.tasks[0].expected_outputs[0].string()) != std::string::npos);
}

TEST_CASE("submit assigns ids and queues every task")
{
    FakeBackend backend;
    JobStore store;
    auto h = submit_job(store, backend, job_of({"x.0", "x.1"}));
    auto job = store.job(h);
    CHECK(job.job_id == "job-0001");
    CHECK(job.submit_seq == 1);
    for (const auto& t : store.tasks(h))
        CHECK(t.state == TaskState::Queued);
    auto big = job_of({"y"});
    big.requested_cores = 9;
    CHECK_THROWS_AS(submit_job(store, backend, big), CapacityError);
}

TEST_CASE("failure inference follows the precedence table")
{
    Task t;
    t.task_id = "t";
    t.expected_outputs = {"/out/a", "/out/b"};
    const auto patterns = default_error_patterns();
    for (const auto& cell : oracle::failure_matrix()) {
        FsView fsv = [&](const fs::path& p) { return !(cell.output_missing && p == "/out/b"); };
        LogView logs = [&](const Task&) {
            std::vector<std::string> l{"starting", "progress 50%"};
            if (cell.log_error)
                l.push_back("worker: Segmentation fault (core dumped)");
            return l;
        };
        auto v = infer_task_status(t, fsv, logs, cell.backend_failed ? BackendState::Failed : BackendState::Done,
                                   cell.exit_nonzero ? 3 : 0, patterns);
        const std::string got = v.failure ? std::string(to_string(v.failure->kind)) : "Succeeded";
        CHECK_MESSAGE(got == cell.expected, "cell " << cell.backend_failed << cell.exit_nonzero
                                                    << cell.output_missing << cell.log_error);
        CHECK((v.state == TaskState::Succeeded) == (std::string(cell.expected) == "Succeeded"));
    }
    auto never = [](const fs::path&) { return false; };
    auto none = [](const Task&) { return std::vector<std::string>{}; };
    CHECK(infer_task_status(t, never, none, BackendState::Queued, std::nullopt, patterns).state ==
          TaskState::Queued);
    CHECK(infer_task_status(t, never, none, BackendState::Running, std::nullopt, patterns).state ==
          TaskState::Running);
}

TEST_CASE("log patterns are case-sensitive")
{
    Task t;
    auto yes = [](const fs::path&) { return true; };
    auto lower = [](const Task&) { return std::vector<std::string>{"no error here", "fatal? nope"}; };
    auto upper = [](const Task&) { return std::vector<std::string>{"FATAL: disk full"}; };
    const auto p = default_error_patterns();
    CHECK(infer_task_status(t, yes, lower, BackendState::Done, 0, p).state == TaskState::Succeeded);
    auto v = infer_task_status(t, yes, upper, BackendState::Done, 0, p);
    CHECK(v.failure->kind == FailureKind::LogError);
    CHECK(v.failure->detail == "FATAL: disk full");
}

TEST_CASE("wait_all drives tasks to terminal states")
{
    FakeBackend backend;
    JobStore store;
    FakeClock clock;
    auto h = submit_job(store, backend, job_of({"s.0", "s.1"}));
    backend.script["s.0"] = {{BackendState::Queued, {}, {}, {}, ""}, done(0, 101, 105)};
    backend.script["s.1"] = {{BackendState::Running, {}, 101, {}, ""}, done(2, 101, 104)};
    auto res = wait_all(store, backend, std::span(&h, 1), fake_wait(clock));
    auto& out = res.at(h);
    REQUIRE(out.size() == 2);
    CHECK(out[0].state == TaskState::Succeeded);
    CHECK(out[0].started == 101.0);
    CHECK(out[0].finished == 105.0);
    CHECK(out[1].state == TaskState::Failed);
    CHECK(out[1].failure->kind == FailureKind::NonzeroExit);
    CHECK(out[1].exit_code == 2);

    // s.0 went Queued -> Running -> Succeeded even though Running was never polled.
    std::vector<TaskState> seen;
    for (const auto& e : store.events())
        if (e.task_id == "s.0")
            seen.push_back(e.new_state);
    CHECK(seen == std::vector<TaskState>{TaskState::Queued, TaskState::Running, TaskState::Succeeded});
}

TEST_CASE("wait_all times out and reports pending tasks")
{
    FakeBackend backend;
    JobStore store;
    FakeClock clock;
    auto h = submit_job(store, backend, job_of({"s.0"}));
    backend.script["s.0"] = {{BackendState::Running, {}, 1, {}, ""}};
    try {
        wait_all(store, backend, std::span(&h, 1), fake_wait(clock));
        FAIL("expected timeout");
    } catch (const WaitTimeout& e) {
        CHECK(e.pending_tasks() == std::vector<std::string>{"s.0"});
        CHECK(clock.t >= 10.0);
    }
}

TEST_CASE("a lost backend fails the remaining tasks")
{
    FakeBackend backend;
    JobStore store;
    FakeClock clock;
    auto h = submit_job(store, backend, job_of({"s.0", "s.1"}));
    backend.down = true;
    auto res = wait_all(store, backend, std::span(&h, 1), fake_wait(clock));
    for (const auto& o : res.at(h)) {
        CHECK(o.state == TaskState::Failed);
        CHECK(o.failure->kind == FailureKind::BackendFailed);
    }
}

TEST_CASE("run_shell captures exit codes and logs")
{
    testing::TempDir dir("sh");
    CHECK(run_shell("echo hi; exit 3", dir.path()).exit_code == 3);
    CHECK(testing::read_file(dir / "stdout.log") == "hi\n");
    CHECK(run_shell("kill -9 $$", dir.path()).exit_code == 128 + 9);
    CHECK(run_shell("pwd", dir.path()).exit_code == 0);
    CHECK(testing::read_file(dir / "stdout.log").find(dir.path().string()) != std::string::npos);
}

TEST_CASE("local backend runs jobs and can be shut down")
{
    testing::TempDir dir("local");
    LocalBackend backend(2);
    JobStore store;
    auto job = job_of({"a", "b", "c"});
    for (auto& t : job.tasks) {
        t.workdir = dir / t.task_id;
        fs::create_directories(t.workdir);
        t.command = "touch out";
        t.expected_outputs = {t.workdir / "out"};
        t.log_glob = (t.workdir / "*.log").string();
    }
    job.requested_cores = 2;
    auto h = submit_job(store, backend, job);
    WaitOptions w;
    w.poll_interval_s = 0.01;
    w.timeout_s = 30;
    auto res = wait_all(store, backend, std::span(&h, 1), w);
    for (const auto& o : res.at(h)) {
        CHECK(o.state == TaskState::Succeeded);
        CHECK(o.finished >= o.started);
    }
    auto too_big = job_of({"d"});
    too_big.requested_cores = 3;
    CHECK_THROWS_AS(submit_job(store, backend, too_big), CapacityError);
    backend.shutdown();
    CHECK_THROWS_AS(backend.poll(h), BackendUnavailable);
}

namespace {

pipeline::PipelineSpec shell_pipeline(const std::string& second_command)
{
    pipeline::PipelineSpec spec;
    spec.name = "shell";
    pipeline::StageSpec upper;
    upper.id = "upper";
    upper.mode = pipeline::StageMode::Scatter;
    upper.command_template =
        "awk '/^>/ {print; next} {print tolower($0)}' {input} > {workdir}/low_{part}.fa && echo part {part}";
    upper.expected_outputs = {"{workdir}/low_{part}.fa"};
    upper.base_time_s = 2.0;
    upper.input = "dataset";
    pipeline::StageSpec count;
    count.id = "count";
    count.mode = pipeline::StageMode::Scatter;
    count.command_template = second_command;
    count.expected_outputs = {"{workdir}/count.tsv"};
    count.base_time_s = 1.0;
    count.input = "upper";
    spec.stages = {upper, count};
    return spec;
}

const char* kCount = "printf '#part\\tn\\n{part}\\t%s\\n' $(grep -c '>' {input}) > {workdir}/count.tsv";

}  // namespace

TEST_CASE("run_pipeline scatters, gathers in input order and cleans up")
{
    testing::TempDir dir("run");
    auto reads = testing::random_records(23, 5, false);
    for (auto& r : reads)
        for (auto& c : r.bases)
            c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    auto spec = shell_pipeline(kCount);
    LocalBackend backend(4);
    RunOptions opts;
    opts.run_root = dir / "r";
    opts.wait.poll_interval_s = 0.01;
    auto res = run_pipeline(spec, reads, backend, 4, opts);
    REQUIRE(res.succeeded());
    REQUIRE(res.stages.size() == 2);

    auto low = seq::read_sequence_file(res.stages[0].products.at(0));
    REQUIRE(low.size() == reads.size());
    for (std::size_t i = 0; i < reads.size(); ++i) {
        CHECK(low[i].id == reads[i].id);
        std::string expect = reads[i].bases;
        for (auto& c : expect)
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        CHECK(low[i].bases == expect);
    }
    CHECK(res.stages[0].products[0].filename() == "low_all.fa");
    CHECK(testing::read_file(res.stages[1].products.at(0)) == "#part\tn\n0\t6\n1\t6\n2\t6\n3\t5\n");
    CHECK_FALSE(fs::exists(dir / "r" / "upper"));
    CHECK_FALSE(fs::exists(dir / "r" / "_results" / "upper" / "part_0"));
    CHECK(res.metrics.tool_times.at("upper").size() == 4);
    CHECK(res.metrics.core_count == 4);
    CHECK(fs::exists(dir / "r" / "ledger.jsonl"));
}

TEST_CASE("a failing stage stops the run and keeps only failed workdirs")
{
    testing::TempDir dir("fail");
    auto reads = testing::random_records(8, 6, false);
    auto spec = shell_pipeline("if [ {part} = 1 ]; then exit 7; fi; touch {workdir}/count.tsv");
    LocalBackend backend(2);
    RunOptions opts;
    opts.run_root = dir / "r";
    opts.wait.poll_interval_s = 0.01;
    auto res = run_pipeline(spec, reads, backend, 2, opts);
    REQUIRE_FALSE(res.succeeded());
    CHECK(res.failure->stage_id == "count");
    CHECK(res.failure->task_id == "count.1");
    CHECK(res.failure->reason.kind == FailureKind::NonzeroExit);
    CHECK(fs::exists(dir / "r" / "count" / "part_1"));
    CHECK_FALSE(fs::exists(dir / "r" / "count" / "part_0"));
}

TEST_CASE("missing outputs and log errors fail tasks")
{
    testing::TempDir dir("miss");
    auto reads = testing::random_records(4, 7, false);
    LocalBackend backend(2);
    RunOptions opts;
    opts.wait.poll_interval_s = 0.01;

    opts.run_root = dir / "a";
    auto res = run_pipeline(shell_pipeline("echo no output {part}"), reads, backend, 2, opts);
    REQUIRE_FALSE(res.succeeded());
    CHECK(res.failure->reason.kind == FailureKind::MissingOutput);

    opts.run_root = dir / "b";
    res = run_pipeline(shell_pipeline("touch {workdir}/count.tsv; echo 'ERROR: bad part {part}' >&2"), reads,
                       backend, 2, opts);
    REQUIRE_FALSE(res.succeeded());
    CHECK(res.failure->reason.kind == FailureKind::LogError);
    CHECK(res.failure->reason.detail.find("ERROR: bad part") != std::string::npos);
}

TEST_CASE("the simulated backend reports virtual times")
{
    testing::TempDir dir("simrun");
    auto reads = testing::random_records(10, 8, false);
    sim::SimClusterConfig cfg;
    cfg.nodes = {{"n0", 2, 1.0}};
    // Core budget 4 on a 2-core cluster would not fit the gang; budget 2 does.
    SimBackend backend(cfg, true);
    RunOptions opts;
    opts.run_root = dir / "r";
    opts.wait.poll_interval_s = 0.0;
    auto res = run_pipeline(shell_pipeline(kCount), reads, backend, 2, opts);
    REQUIRE(res.succeeded());
    CHECK(res.stages[0].makespan_s == 2.0);
    CHECK(res.stages[1].makespan_s == 1.0);
    CHECK(res.metrics.makespan() == 3.0);
    CHECK(backend.now() == 3.0);

    SimBackend small(cfg, true);
    opts.run_root = dir / "r2";
    CHECK_THROWS_AS(run_pipeline(shell_pipeline(kCount), reads, small, 4, opts), CapacityError);
}
