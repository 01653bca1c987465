#include "mpipe/local_backend.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>

namespace mpipe::exec {

namespace {

double epoch_seconds()
{
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
}

int decode_status(int status)
{
    if (WIFEXITED(status))
        return WEXITSTATUS(status);
    if (WIFSIGNALED(status))
        return 128 + WTERMSIG(status);
    return 255;
}

// Forks a child in its own process group; returns its pid or -1.
int spawn(const std::string& command, const fs::path& workdir)
{
    const std::string dir = workdir.string();
    const std::string out = (workdir / "stdout.log").string();
    const std::string err = (workdir / "stderr.log").string();
    pid_t pid = ::fork();
    if (pid != 0)
        return pid;
    // Child: only async-signal-safe calls from here on.
    ::setpgid(0, 0);
    if (::chdir(dir.c_str()) != 0)
        ::_exit(127);
    int fo = ::open(out.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    int fe = ::open(err.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    int fi = ::open("/dev/null", O_RDONLY);
    if (fo < 0 || fe < 0 || fi < 0)
        ::_exit(127);
    ::dup2(fi, 0);
    ::dup2(fo, 1);
    ::dup2(fe, 2);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
}

int reap(int pid)
{
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0) {
        if (errno != EINTR)
            return 255;
    }
    return decode_status(status);
}

}  // namespace

ShellResult run_shell(const std::string& command, const fs::path& workdir)
{
    int pid = spawn(command, workdir);
    if (pid < 0)
        throw Error("fork failed");
    return {reap(pid)};
}

LocalBackend::LocalBackend(int workers) : workers_(workers)
{
    if (workers < 1)
        throw Error("local backend needs at least one worker");
    for (int i = 0; i < workers; ++i)
        threads_.emplace_back([this] { worker(); });
}

LocalBackend::~LocalBackend()
{
    shutdown();
}

void LocalBackend::check_up() const
{
    if (stopping_)
        throw BackendUnavailable("local backend has been shut down");
}

double LocalBackend::now() const
{
    return epoch_seconds();
}

BackendHandle LocalBackend::submit(const JobSubmission& job)
{
    std::lock_guard lock(mu_);
    check_up();
    if (job.requested_cores > workers_)
        throw CapacityError("job requests " + std::to_string(job.requested_cores) + " cores; " +
                            std::to_string(workers_) + " workers available");
    BackendHandle h{"local-" + std::to_string(++next_id_)};
    auto& ids = by_handle_[h.id];
    for (const auto& t : job.tasks) {
        Entry e;
        e.handle = h.id;
        e.task_id = t.task_id;
        e.command = t.command;
        e.workdir = t.workdir;
        ids.push_back(entries_.size());
        queue_.push_back(entries_.size());
        entries_.push_back(std::move(e));
    }
    cv_.notify_all();
    return h;
}

std::map<std::string, TaskPoll> LocalBackend::poll(const BackendHandle& handle)
{
    std::lock_guard lock(mu_);
    check_up();
    auto it = by_handle_.find(handle.id);
    if (it == by_handle_.end())
        throw Error("unknown handle '" + handle.id + "'");
    std::map<std::string, TaskPoll> out;
    for (auto i : it->second)
        out[entries_[i].task_id] = entries_[i].poll;
    return out;
}

void LocalBackend::cancel(const BackendHandle& handle)
{
    std::lock_guard lock(mu_);
    auto it = by_handle_.find(handle.id);
    if (it == by_handle_.end())
        return;
    for (auto i : it->second) {
        Entry& e = entries_[i];
        e.cancelled = true;
        if (e.poll.state == BackendState::Queued) {
            e.poll.state = BackendState::Failed;
            e.poll.detail = "cancelled before start";
        } else if (e.poll.state == BackendState::Running && e.pid > 0) {
            ::kill(-e.pid, SIGTERM);
        }
    }
}

void LocalBackend::shutdown()
{
    {
        std::lock_guard lock(mu_);
        if (stopping_ && threads_.empty())
            return;
        stopping_ = true;
        for (auto& e : entries_) {
            if (e.poll.state == BackendState::Running && e.pid > 0)
                ::kill(-e.pid, SIGTERM);
        }
    }
    cv_.notify_all();
    for (auto& t : threads_)
        t.join();
    threads_.clear();
}

void LocalBackend::worker()
{
    for (;;) {
        std::size_t idx;
        std::string command;
        fs::path workdir;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (stopping_)
                return;
            idx = queue_.front();
            queue_.pop_front();
            Entry& e = entries_[idx];
            if (e.cancelled)
                continue;
            command = e.command;
            workdir = e.workdir;
            int pid = spawn(command, workdir);
            if (pid < 0) {
                e.poll.state = BackendState::Failed;
                e.poll.detail = "fork failed";
                continue;
            }
            e.pid = pid;
            e.poll.state = BackendState::Running;
            e.poll.started = epoch_seconds();
        }
        int pid;
        {
            std::lock_guard lock(mu_);
            pid = entries_[idx].pid;
        }
        int code = reap(pid);
        std::lock_guard lock(mu_);
        Entry& e = entries_[idx];
        e.pid = 0;
        e.poll.finished = epoch_seconds();
        e.poll.exit_code = code;
        e.poll.state = BackendState::Done;
    }
}

}  // namespace mpipe::exec
