#include "mpipe/sim_backend.hpp"

#include "mpipe/local_backend.hpp"

#include <algorithm>

namespace mpipe::exec {

SimBackend::SimBackend(sim::SimClusterConfig config, bool execute_commands)
    : cluster_(std::move(config)), execute_(execute_commands)
{
}

BackendHandle SimBackend::submit(const JobSubmission& job)
{
    sim::SimJob sj;
    sj.job_id = job.job_id.empty() ? "sim-job-" + std::to_string(next_id_ + 1) : job.job_id;
    sj.user = job.user;
    sj.requested_cores = job.requested_cores;
    sj.tool = job.tasks.empty() ? sj.job_id : job.tasks.front().stage_id;
    Entry e;
    for (const auto& t : job.tasks) {
        sj.base_task_times.push_back(t.base_time_s);
        sj.task_ids.push_back(t.task_id);
        e.task_ids.push_back(t.task_id);
        e.commands.push_back(t.command);
        e.workdirs.push_back(t.workdir);
    }
    try {
        e.job = cluster_.enqueue(std::move(sj), cluster_.now());
    } catch (const sim::CapacityError& ex) {
        throw CapacityError(ex.what());
    }
    BackendHandle h{"sim-" + std::to_string(++next_id_)};
    entries_.emplace(h.id, std::move(e));
    return h;
}

void SimBackend::run_finished_commands()
{
    if (!execute_)
        return;
    struct Due {
        double finished;
        std::string task_id;
        const std::string* command;
        const fs::path* workdir;
    };
    std::vector<Due> due;
    for (const auto& [id, e] : entries_) {
        if (e.cancelled)
            continue;
        auto status = cluster_.task_status(e.job);
        for (std::size_t k = 0; k < status.size(); ++k) {
            if (status[k].finished && !exit_codes_.count(e.task_ids[k]))
                due.push_back({*status[k].finished, e.task_ids[k], &e.commands[k], &e.workdirs[k]});
        }
    }
    std::stable_sort(due.begin(), due.end(),
                     [](const Due& a, const Due& b) { return a.finished < b.finished; });
    for (const auto& d : due)
        exit_codes_[d.task_id] = run_shell(*d.command, *d.workdir).exit_code;
}

std::map<std::string, TaskPoll> SimBackend::poll(const BackendHandle& handle)
{
    auto it = entries_.find(handle.id);
    if (it == entries_.end())
        throw Error("unknown handle '" + handle.id + "'");
    cluster_.advance();
    run_finished_commands();

    std::map<std::string, TaskPoll> out;
    const Entry& e = it->second;
    auto status = cluster_.task_status(e.job);
    for (std::size_t k = 0; k < status.size(); ++k) {
        TaskPoll p;
        p.started = status[k].started;
        p.finished = status[k].finished;
        if (e.cancelled && !p.finished) {
            p.state = BackendState::Failed;
            p.detail = "cancelled";
        } else if (p.finished) {
            p.state = BackendState::Done;
            auto code = exit_codes_.find(e.task_ids[k]);
            p.exit_code = code != exit_codes_.end() ? code->second : 0;
        } else if (p.started) {
            p.state = BackendState::Running;
        }
        out[e.task_ids[k]] = p;
    }
    return out;
}

void SimBackend::cancel(const BackendHandle& handle)
{
    if (auto it = entries_.find(handle.id); it != entries_.end())
        it->second.cancelled = true;
}

}  // namespace mpipe::exec
