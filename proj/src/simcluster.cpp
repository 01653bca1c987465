#include "mpipe/simcluster.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <tuple>

namespace mpipe::sim {

void SimClusterConfig::validate() const
{
    if (nodes.empty())
        throw Error("cluster has no nodes");
    std::set<std::string> names;
    for (const auto& n : nodes) {
        if (n.cores < 1)
            throw Error("node '" + n.name + "' must have at least one core");
        if (!(n.slowdown >= 1.0) || !std::isfinite(n.slowdown))
            throw Error("node '" + n.name + "' slowdown must be >= 1.0");
        if (!names.insert(n.name).second)
            throw Error("duplicate node name '" + n.name + "'");
    }
    if (!(service_time_jitter >= 0.0) || !std::isfinite(service_time_jitter))
        throw Error("service_time_jitter must be >= 0");
}

int SimClusterConfig::capacity() const
{
    int total = 0;
    for (const auto& n : nodes)
        total += n.cores;
    return total;
}

bool SimClusterConfig::has_stragglers() const
{
    return std::any_of(nodes.begin(), nodes.end(), [](const SimNode& n) { return n.slowdown > 1.0; });
}

std::string_view to_string(EventKind k)
{
    switch (k) {
    case EventKind::JobQueued: return "JobQueued";
    case EventKind::JobStarted: return "JobStarted";
    case EventKind::TaskStarted: return "TaskStarted";
    case EventKind::TaskFinished: return "TaskFinished";
    case EventKind::JobFinished: return "JobFinished";
    }
    return "?";
}

SimCluster::SimCluster(SimClusterConfig config) : config_(std::move(config)), rng_(config_.seed)
{
    config_.validate();
    for (const auto& n : config_.nodes)
        owner_.emplace_back(static_cast<std::size_t>(n.cores), 0);
}

SimJobHandle SimCluster::enqueue(SimJob job, double at)
{
    if (!(at >= now_) || !std::isfinite(at))
        throw Error("job '" + job.job_id + "' enqueued in the past");
    if (job.base_task_times.empty())
        throw Error("job '" + job.job_id + "' has no tasks");
    if (job.requested_cores < 1)
        throw Error("job '" + job.job_id + "' requests fewer than one core");
    for (double t : job.base_task_times)
        if (!(t >= 0.0) || !std::isfinite(t))
            throw Error("job '" + job.job_id + "' has a negative task time");
    for (const auto& existing : jobs_)
        if (existing.spec.job_id == job.job_id)
            throw Error("duplicate job id '" + job.job_id + "'");

    int reachable = 0;
    if (job.allowed_nodes.empty()) {
        reachable = capacity();
    } else {
        std::sort(job.allowed_nodes.begin(), job.allowed_nodes.end());
        job.allowed_nodes.erase(std::unique(job.allowed_nodes.begin(), job.allowed_nodes.end()),
                                job.allowed_nodes.end());
        for (int n : job.allowed_nodes) {
            if (n < 0 || n >= static_cast<int>(config_.nodes.size()))
                throw Error("job '" + job.job_id + "' pinned to unknown node");
            reachable += config_.nodes[static_cast<std::size_t>(n)].cores;
        }
    }
    if (job.requested_cores > reachable)
        throw CapacityError("job '" + job.job_id + "' requests " + std::to_string(job.requested_cores) +
                            " cores; capacity is " + std::to_string(reachable));

    if (job.task_ids.empty()) {
        for (std::size_t k = 0; k < job.base_task_times.size(); ++k)
            job.task_ids.push_back(job.job_id + ".t" + std::to_string(k));
    } else if (job.task_ids.size() != job.base_task_times.size()) {
        throw Error("job '" + job.job_id + "' task id count does not match task times");
    }
    if (job.tool.empty())
        job.tool = job.job_id;

    JobState st;
    std::size_t n = job.base_task_times.size();
    st.spec = std::move(job);
    st.seq = jobs_.size();
    st.enqueued = at;
    st.task_start.resize(n);
    st.task_finish.resize(n);
    st.task_slot.assign(n, Slot{-1, -1});
    jobs_.push_back(std::move(st));
    std::size_t idx = jobs_.size() - 1;
    pending_.push({at, static_cast<int>(EventKind::JobQueued), next_id_++, idx, 0});
    return {idx, jobs_.back().spec.job_id};
}

std::vector<SimTaskStatus> SimCluster::task_status(const SimJobHandle& h) const
{
    const auto& job = jobs_.at(h.index);
    std::vector<SimTaskStatus> out;
    for (std::size_t t = 0; t < job.spec.task_ids.size(); ++t)
        out.push_back({job.spec.task_ids[t], job.task_start[t], job.task_finish[t], job.task_slot[t].node});
    return out;
}

void SimCluster::emit(EventKind kind, const JobState& job, std::string task_id, int node, int core)
{
    trace_.push_back({now_, kind, job.spec.job_id, std::move(task_id), node, core});
}

double SimCluster::jitter_factor()
{
    if (config_.service_time_jitter == 0.0)
        return 1.0;
    // 53 high bits of the engine, so draws do not depend on the library's distributions.
    double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return 1.0 + config_.service_time_jitter * u;
}

void SimCluster::start_task(std::size_t j, Slot slot)
{
    auto& job = jobs_[j];
    std::size_t t = job.next_task++;
    const auto& node = config_.nodes[static_cast<std::size_t>(slot.node)];
    double duration = job.spec.base_task_times[t] * node.slowdown * jitter_factor();
    job.task_start[t] = now_;
    job.task_slot[t] = slot;
    emit(EventKind::TaskStarted, job, job.spec.task_ids[t], slot.node, slot.core);
    pending_.push({now_ + duration, static_cast<int>(EventKind::TaskFinished), next_id_++, j, t});
}

void SimCluster::finish_task(std::size_t j, std::size_t t)
{
    auto& job = jobs_[j];
    job.task_finish[t] = now_;
    ++job.done;
    Slot slot = job.task_slot[t];
    emit(EventKind::TaskFinished, job, job.spec.task_ids[t], slot.node, slot.core);

    // The freed core stays with the job and pulls the next unstarted task once
    // every event at this instant is processed, lowest node and core first.
    if (job.next_task < job.spec.base_task_times.size()) {
        refill_.push_back({j, slot});
        return;
    }
    if (job.done == job.spec.base_task_times.size()) {
        job.finished = true;
        for (const auto& s : job.slots)
            owner_[static_cast<std::size_t>(s.node)][static_cast<std::size_t>(s.core)] = 0;
        --user_running_[job.spec.user];
        emit(EventKind::JobFinished, job);
    }
}

int SimCluster::free_cores(const JobState& job) const
{
    int free = 0;
    for (std::size_t n = 0; n < owner_.size(); ++n) {
        if (!job.spec.allowed_nodes.empty() &&
            !std::binary_search(job.spec.allowed_nodes.begin(), job.spec.allowed_nodes.end(),
                                static_cast<int>(n)))
            continue;
        free += static_cast<int>(std::count(owner_[n].begin(), owner_[n].end(), std::size_t{0}));
    }
    return free;
}

void SimCluster::dispatch()
{
    while (!queued_.empty()) {
        // Priority key is recomputed on every pass: running-job counts change as jobs start.
        auto key = [&](std::size_t j) {
            const auto& job = jobs_[j];
            auto it = user_running_.find(job.spec.user);
            int running = it == user_running_.end() ? 0 : it->second;
            return std::make_tuple(running, job.spec.requested_cores, job.seq);
        };
        auto best = std::min_element(queued_.begin(), queued_.end(),
                                     [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
        std::size_t j = *best;
        auto& job = jobs_[j];
        if (free_cores(job) < job.spec.requested_cores)
            return;  // no backfill: the head job blocks everyone behind it
        queued_.erase(best);

        // Lowest node first, lowest core first.
        int need = job.spec.requested_cores;
        for (std::size_t n = 0; n < owner_.size() && need > 0; ++n) {
            if (!job.spec.allowed_nodes.empty() &&
                !std::binary_search(job.spec.allowed_nodes.begin(), job.spec.allowed_nodes.end(),
                                    static_cast<int>(n)))
                continue;
            for (std::size_t c = 0; c < owner_[n].size() && need > 0; ++c) {
                if (owner_[n][c] == 0) {
                    owner_[n][c] = j + 1;
                    job.slots.push_back({static_cast<int>(n), static_cast<int>(c)});
                    --need;
                }
            }
        }
        job.started = true;
        ++user_running_[job.spec.user];
        emit(EventKind::JobStarted, job);
        for (const auto& slot : job.slots) {
            if (job.next_task >= job.spec.base_task_times.size())
                break;
            start_task(j, slot);
        }
    }
}

SimEventTrace SimCluster::advance(std::optional<double> until)
{
    std::size_t first = trace_.size();
    while (!pending_.empty() && (!until || pending_.top().time <= *until)) {
        now_ = pending_.top().time;
        while (!pending_.empty() && pending_.top().time == now_) {
            Pending ev = pending_.top();
            pending_.pop();
            auto& job = jobs_[ev.job];
            if (ev.kind == static_cast<int>(EventKind::JobQueued)) {
                job.arrived = true;
                queued_.push_back(ev.job);
                emit(EventKind::JobQueued, job);
            } else {
                finish_task(ev.job, ev.task);
            }
        }
        std::sort(refill_.begin(), refill_.end(), [](const Refill& a, const Refill& b) {
            return std::tie(a.slot.node, a.slot.core) < std::tie(b.slot.node, b.slot.core);
        });
        for (const auto& r : refill_)
            if (jobs_[r.job].next_task < jobs_[r.job].spec.base_task_times.size())
                start_task(r.job, r.slot);
        refill_.clear();
        dispatch();
    }
    if (until && *until > now_)
        now_ = *until;
    return SimEventTrace(trace_.begin() + static_cast<std::ptrdiff_t>(first), trace_.end());
}

JobTiming job_makespan(const SimEventTrace& trace, std::string_view job_id)
{
    std::optional<double> queued, started, finished, last_task;
    for (const auto& e : trace) {
        if (e.job_id != job_id)
            continue;
        switch (e.kind) {
        case EventKind::JobQueued: queued = e.time; break;
        case EventKind::JobStarted: started = e.time; break;
        case EventKind::TaskFinished: last_task = std::max(last_task.value_or(e.time), e.time); break;
        case EventKind::JobFinished: finished = e.time; break;
        case EventKind::TaskStarted: break;
        }
    }
    if (!queued || !started || !finished || !last_task)
        throw Error("job '" + std::string(job_id) + "' has not finished in the trace");
    JobTiming t;
    t.enqueued = *queued;
    t.started = *started;
    t.finished = *finished;
    t.exec = *last_task - *started;
    t.wait = *started - *queued;
    t.turnaround = t.wait + t.exec;
    return t;
}

std::string trace_jsonl(const SimEventTrace& trace, const SimClusterConfig& config)
{
    std::string out;
    for (const auto& e : trace) {
        nlohmann::ordered_json j;
        j["time"] = e.time;
        j["kind"] = std::string(to_string(e.kind));
        j["job_id"] = e.job_id;
        if (!e.task_id.empty()) {
            j["task_id"] = e.task_id;
            j["node"] = config.nodes.at(static_cast<std::size_t>(e.node)).name;
            j["core"] = e.core;
        }
        out += j.dump();
        out += '\n';
    }
    return out;
}

namespace {

using nlohmann::ordered_json;

[[noreturn]] void scenario_fail(const std::string& where, const std::string& msg)
{
    throw Error("scenario " + where + ": " + msg);
}

void check_keys(const ordered_json& obj, const std::string& where,
                std::initializer_list<std::string_view> allowed)
{
    if (!obj.is_object())
        scenario_fail(where, "expected an object");
    for (const auto& [key, _] : obj.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            scenario_fail(where, "unknown field '" + key + "'");
}

template <typename T>
T get_or(const ordered_json& obj, const char* key, T fallback, const std::string& where)
{
    auto it = obj.find(key);
    if (it == obj.end())
        return fallback;
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        scenario_fail(where, std::string("field '") + key + "' has the wrong type");
    }
}

const ordered_json& need(const ordered_json& obj, const char* key, const std::string& where)
{
    auto it = obj.find(key);
    if (it == obj.end())
        scenario_fail(where, std::string("missing required field '") + key + "'");
    return *it;
}

}  // namespace

Scenario parse_scenario(std::string_view text)
{
    ordered_json doc;
    try {
        doc = ordered_json::parse(text, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        auto [line, col] = text::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ParseError(line, "column " + std::to_string(col) + ": syntax error: " + e.what());
    }
    check_keys(doc, "root", {"seed", "jitter", "nodes", "jobs"});
    Scenario sc;
    sc.cluster.seed = get_or<std::uint64_t>(doc, "seed", 0, "root");
    sc.cluster.service_time_jitter = get_or<double>(doc, "jitter", 0.0, "root");

    const auto& nodes = need(doc, "nodes", "root");
    if (!nodes.is_array())
        scenario_fail("root", "'nodes' must be a list");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        std::string where = "nodes[" + std::to_string(i) + "]";
        check_keys(nodes[i], where, {"name", "count", "cores", "slowdown"});
        auto name = get_or<std::string>(nodes[i], "name", "node", where);
        int count = get_or<int>(nodes[i], "count", 0, where);
        int cores = get_or<int>(nodes[i], "cores", 1, where);
        double slowdown = get_or<double>(nodes[i], "slowdown", 1.0, where);
        if (count < 0)
            scenario_fail(where, "count must be >= 0");
        if (count == 0) {
            sc.cluster.nodes.push_back({name, cores, slowdown});
        } else {
            for (int k = 0; k < count; ++k)
                sc.cluster.nodes.push_back({name + std::to_string(k), cores, slowdown});
        }
    }
    sc.cluster.validate();

    std::map<std::string, int> node_index;
    for (std::size_t i = 0; i < sc.cluster.nodes.size(); ++i)
        node_index[sc.cluster.nodes[i].name] = static_cast<int>(i);

    const auto& jobs = need(doc, "jobs", "root");
    if (!jobs.is_array())
        scenario_fail("root", "'jobs' must be a list");
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        std::string where = "jobs[" + std::to_string(i) + "]";
        const auto& j = jobs[i];
        check_keys(j, where, {"id", "tool", "user", "cores", "tasks", "base_time_s", "task_times",
                              "arrival_s", "nodes", "repeat"});
        SimJob job;
        job.job_id = get_or<std::string>(j, "id", "", where);
        if (job.job_id.empty())
            scenario_fail(where, "missing required field 'id'");
        job.tool = get_or<std::string>(j, "tool", job.job_id, where);
        job.user = get_or<std::string>(j, "user", "user", where);
        job.requested_cores = get_or<int>(j, "cores", 1, where);
        if (j.contains("task_times")) {
            if (j.contains("tasks") || j.contains("base_time_s"))
                scenario_fail(where, "give either task_times or tasks + base_time_s");
            job.base_task_times = get_or<std::vector<double>>(j, "task_times", {}, where);
        } else {
            need(j, "tasks", where);
            int tasks = get_or<int>(j, "tasks", 0, where);
            double base = get_or<double>(j, "base_time_s", 1.0, where);
            if (tasks < 1)
                scenario_fail(where, "tasks must be >= 1");
            job.base_task_times.assign(static_cast<std::size_t>(tasks), base);
        }
        for (const auto& name : get_or<std::vector<std::string>>(j, "nodes", {}, where)) {
            auto it = node_index.find(name);
            if (it == node_index.end())
                scenario_fail(where, "unknown node '" + name + "'");
            job.allowed_nodes.push_back(it->second);
        }
        double arrival = get_or<double>(j, "arrival_s", 0.0, where);
        int repeat = get_or<int>(j, "repeat", 1, where);
        if (repeat < 1)
            scenario_fail(where, "repeat must be >= 1");
        if (repeat == 1) {
            sc.jobs.push_back({job, arrival});
        } else {
            for (int r = 0; r < repeat; ++r) {
                SimJob copy = job;
                copy.job_id += "-r" + std::to_string(r);
                sc.jobs.push_back({std::move(copy), arrival});
            }
        }
    }
    return sc;
}

ScenarioRun run_scenario(const Scenario& scenario)
{
    SimCluster cluster(scenario.cluster);
    std::vector<SimJobHandle> handles;
    // Arrivals are handed to the cluster in time order; equal times keep file order.
    std::vector<std::size_t> order(scenario.jobs.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scenario.jobs[a].arrival < scenario.jobs[b].arrival;
    });
    for (auto i : order)
        handles.push_back(cluster.enqueue(scenario.jobs[i].job, scenario.jobs[i].arrival));
    cluster.advance();

    ScenarioRun run;
    run.trace = cluster.trace();
    for (const auto& sj : scenario.jobs) {
        auto it = std::find_if(handles.begin(), handles.end(),
                               [&](const SimJobHandle& h) { return h.job_id == sj.job.job_id; });
        run.jobs.emplace_back(cluster.job(*it), job_makespan(run.trace, sj.job.job_id));
    }
    return run;
}

std::string summary_tsv(const ScenarioRun& run)
{
    std::ostringstream out;
    out << "#job_id\ttool\tuser\tcores\ttasks\twait_s\texec_s\tturnaround_s\n";
    for (const auto& [job, t] : run.jobs)
        out << job.job_id << '\t' << job.tool << '\t' << job.user << '\t' << job.requested_cores
            << '\t' << job.base_task_times.size() << '\t' << text::format_double(t.wait) << '\t'
            << text::format_double(t.exec) << '\t' << text::format_double(t.turnaround) << '\n';
    return out.str();
}

}  // namespace mpipe::sim
