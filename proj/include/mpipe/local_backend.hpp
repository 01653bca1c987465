#pragma once

#include "mpipe/executor.hpp"

#include <condition_variable>
#include <deque>
#include <thread>

namespace mpipe::exec {

struct ShellResult {
    int exit_code = 0;  // 128 + signal when killed
};

/// Runs `command` with /bin/sh in `workdir`, appending stdout and stderr to
/// workdir/stdout.log and workdir/stderr.log.
ShellResult run_shell(const std::string& command, const fs::path& workdir);

/// Runs tasks as local processes on a fixed pool of worker threads. Each
/// worker counts as one core; tasks start in submission order.
class LocalBackend final : public Backend {
public:
    explicit LocalBackend(int workers);
    ~LocalBackend() override;

    LocalBackend(const LocalBackend&) = delete;
    LocalBackend& operator=(const LocalBackend&) = delete;

    int capacity() const override { return workers_; }
    BackendHandle submit(const JobSubmission& job) override;
    std::map<std::string, TaskPoll> poll(const BackendHandle& handle) override;
    void cancel(const BackendHandle& handle) override;
    double now() const override;

    /// Stops the workers and kills running tasks; later calls throw
    /// BackendUnavailable.
    void shutdown();

private:
    struct Entry {
        std::string handle;
        std::string task_id;
        std::string command;
        fs::path workdir;
        TaskPoll poll;
        int pid = 0;
        bool cancelled = false;
    };

    void worker();
    void check_up() const;

    int workers_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::size_t> queue_;
    std::vector<Entry> entries_;
    std::map<std::string, std::vector<std::size_t>> by_handle_;
    std::vector<std::thread> threads_;
    std::uint64_t next_id_ = 0;
    bool stopping_ = false;
};

}  // namespace mpipe::exec
