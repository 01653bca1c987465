#pragma once

#include "mpipe/executor.hpp"
#include "mpipe/simcluster.hpp"

namespace mpipe::exec {

/// Backend over the simulated cluster. Task durations come from each task's
/// base_time_s; the clock is virtual. When `execute_commands` is set, each
/// task's command is also run locally once its simulated finish is reached,
/// in finish order, and its exit code is reported.
class SimBackend final : public Backend {
public:
    explicit SimBackend(sim::SimClusterConfig config, bool execute_commands = false);

    int capacity() const override { return cluster_.capacity(); }
    BackendHandle submit(const JobSubmission& job) override;
    std::map<std::string, TaskPoll> poll(const BackendHandle& handle) override;
    void cancel(const BackendHandle& handle) override;
    double now() const override { return cluster_.now(); }

    const sim::SimCluster& cluster() const { return cluster_; }

private:
    struct Entry {
        sim::SimJobHandle job;
        std::vector<std::string> task_ids;
        std::vector<std::string> commands;
        std::vector<fs::path> workdirs;
        bool cancelled = false;
    };

    void run_finished_commands();

    sim::SimCluster cluster_;
    bool execute_;
    std::map<std::string, Entry> entries_;
    std::map<std::string, int> exit_codes_;  // task id -> exit code once executed
    std::uint64_t next_id_ = 0;
};

}  // namespace mpipe::exec
