#include "mpipe/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <tuple>

namespace mpipe::metrics {

using nlohmann::ordered_json;

double RunMetrics::makespan() const
{
    double total = 0.0;
    for (const auto& [stage, t] : stage_makespans)
        total += t;
    return total;
}

void RunMetrics::validate() const
{
    auto bad = [](double t) { return !std::isfinite(t) || t < 0.0; };
    if (core_count < 1)
        throw Error("run '" + run_id + "': core count must be >= 1");
    for (const auto& [tool, times] : tool_times) {
        if (!stage_makespans.count(tool))
            throw Error("run '" + run_id + "': tool '" + tool + "' has no stage makespan");
        for (double t : times)
            if (bad(t))
                throw Error("run '" + run_id + "': invalid time for tool '" + tool + "'");
    }
    for (const auto& [stage, t] : stage_makespans)
        if (bad(t))
            throw Error("run '" + run_id + "': invalid makespan for stage '" + stage + "'");
}

std::string to_json(const RunMetrics& m)
{
    ordered_json j;
    j["run_id"] = m.run_id;
    j["core_count"] = m.core_count;
    j["tool_times"] = ordered_json::object();
    for (const auto& [tool, times] : m.tool_times)
        j["tool_times"][tool] = times;
    j["stage_makespans"] = ordered_json::object();
    for (const auto& [stage, t] : m.stage_makespans)
        j["stage_makespans"][stage] = t;
    return j.dump(2) + "\n";
}

RunMetrics run_metrics_from_json(std::string_view doc)
{
    RunMetrics m;
    try {
        auto j = nlohmann::json::parse(doc);
        m.run_id = j.at("run_id").get<std::string>();
        m.core_count = j.at("core_count").get<int>();
        for (const auto& [tool, times] : j.at("tool_times").items())
            m.tool_times[tool] = times.get<std::vector<double>>();
        for (const auto& [stage, t] : j.at("stage_makespans").items())
            m.stage_makespans[stage] = t.get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed run metrics: ") + e.what());
    }
    m.validate();
    return m;
}

namespace {

// "<stage>.<k>" belongs to <stage>; anything else is its own stage.
std::string stage_of(const std::string& task_id)
{
    auto dot = task_id.rfind('.');
    if (dot == std::string::npos || dot + 1 == task_id.size())
        return task_id;
    for (std::size_t i = dot + 1; i < task_id.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(task_id[i])))
            return task_id;
    return task_id.substr(0, dot);
}

std::string fixed(double value, int precision)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, value);
    std::string s = buf;
    if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos)
        s.erase(0, s.front() == '-' ? 1 : 0);
    return s;
}

}  // namespace

RunMetrics run_metrics_from_ledger(std::span<const LedgerRow> rows, std::string run_id, int core_count)
{
    struct Span {
        std::optional<double> start, end;
    };
    std::map<std::string, Span> spans;
    for (const auto& r : rows) {
        if (r.new_state == "Running")
            spans[r.task_id].start = r.timestamp;
        else if (r.new_state == "Succeeded" || r.new_state == "Failed")
            spans[r.task_id].end = r.timestamp;
        else
            spans.try_emplace(r.task_id);
    }
    RunMetrics m;
    m.run_id = std::move(run_id);
    m.core_count = core_count;
    std::map<std::string, std::pair<double, double>> window;
    for (const auto& [task, s] : spans) {
        const std::string stage = stage_of(task);
        auto& times = m.tool_times[stage];
        m.stage_makespans.try_emplace(stage, 0.0);
        if (!s.start || !s.end)
            continue;
        times.push_back(std::max(0.0, *s.end - *s.start));
        auto [it, fresh] = window.try_emplace(stage, *s.start, *s.end);
        if (!fresh) {
            it->second.first = std::min(it->second.first, *s.start);
            it->second.second = std::max(it->second.second, *s.end);
        }
    }
    for (const auto& [stage, w] : window)
        m.stage_makespans[stage] = std::max(0.0, w.second - w.first);
    return m;
}

double median(std::vector<double> values)
{
    if (values.empty())
        throw Error("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

BreakdownReport median_breakdown(std::span<const RunMetrics> runs)
{
    if (runs.empty())
        throw Error("breakdown needs at least one run");
    std::set<std::string> tools;
    for (const auto& [tool, _] : runs.front().tool_times)
        tools.insert(tool);
    for (const auto& r : runs) {
        std::set<std::string> these;
        for (const auto& [tool, _] : r.tool_times)
            these.insert(tool);
        if (these != tools)
            throw Error("run '" + r.run_id + "' has a different tool set than run '" +
                        runs.front().run_id + "'");
    }

    BreakdownReport report;
    report.runs = runs.size();
    double total = 0.0;
    for (const auto& tool : tools) {
        std::vector<double> sums;
        for (const auto& r : runs) {
            double s = 0.0;
            for (double t : r.tool_times.at(tool))
                s += t;
            sums.push_back(s);
        }
        ToolShare share{tool, median(std::move(sums)), 0.0};
        total += share.median_time;
        report.tools.push_back(share);
    }
    for (auto& share : report.tools) {
        share.percent = total > 0.0 ? share.median_time / total * 100.0
                                    : 100.0 / static_cast<double>(report.tools.size());
        report.total_percent += share.percent;
    }
    return report;
}

std::vector<SpeedupRow> speedup_table(std::span<const RunMetrics> runs)
{
    std::map<int, std::vector<double>> groups;
    for (const auto& r : runs)
        groups[r.core_count].push_back(r.makespan());
    if (groups.size() < 2)
        throw Error("speedup table needs at least two core counts");
    const int ref_cores = groups.begin()->first;
    const double ref = median(groups.begin()->second);
    std::vector<SpeedupRow> rows;
    for (const auto& [cores, spans] : groups) {
        SpeedupRow row;
        row.cores = cores;
        row.makespan = median(spans);
        if (cores == ref_cores) {
            row.speedup = 1.0;
            row.efficiency = 1.0;
        } else {
            if (row.makespan <= 0.0)
                throw Error("zero makespan at " + std::to_string(cores) + " cores");
            row.speedup = ref / row.makespan;
            row.efficiency = row.speedup * ref_cores / cores;
        }
        rows.push_back(row);
    }
    return rows;
}

void write_breakdown_tsv(const BreakdownReport& report, std::ostream& out)
{
    out << "#tool\tmedian_s\tpercent\n";
    for (const auto& t : report.tools)
        out << t.tool << '\t' << text::format_double(t.median_time) << '\t' << fixed(t.percent, 4) << '\n';
}

void write_run_report(const RunReport& report, std::ostream& text, std::ostream& json)
{
    using text::format_double;
    ordered_json j;
    j["title"] = report.title;
    text << "# " << report.title << "\n";

    if (!report.runs.empty()) {
        std::vector<const RunMetrics*> runs;
        for (const auto& r : report.runs)
            runs.push_back(&r);
        std::sort(runs.begin(), runs.end(), [](auto* a, auto* b) {
            return std::tie(a->core_count, a->run_id) < std::tie(b->core_count, b->run_id);
        });
        text << "\n## runs\nrun_id\tcores\tmakespan_s\n";
        auto& arr = j["runs"] = ordered_json::array();
        for (const auto* r : runs) {
            text << r->run_id << '\t' << r->core_count << '\t' << format_double(r->makespan()) << '\n';
            arr.push_back({{"run_id", r->run_id}, {"core_count", r->core_count}, {"makespan_s", r->makespan()}});
        }
    }

    if (report.breakdown) {
        const auto& b = *report.breakdown;
        text << "\n## breakdown\nnormalization: percent of the summed per-tool medians over " << b.runs
             << (b.runs == 1 ? " run\n" : " runs\n") << "tool\tmedian_s\tpercent\n";
        ordered_json bj;
        bj["normalization"] = "percent of summed per-tool medians";
        bj["runs"] = b.runs;
        bj["tools"] = ordered_json::array();
        for (const auto& t : b.tools) {
            text << t.tool << '\t' << format_double(t.median_time) << '\t' << fixed(t.percent, 4) << '\n';
            bj["tools"].push_back({{"tool", t.tool}, {"median_s", t.median_time}, {"percent", t.percent}});
        }
        text << "total\t\t" << fixed(b.total_percent, 4) << '\n';
        bj["total_percent"] = b.total_percent;
        j["breakdown"] = std::move(bj);
    }

    if (!report.speedups.empty()) {
        auto& arr = j["speedups"] = ordered_json::array();
        for (const auto& s : report.speedups) {
            text << "\n## speedup: " << s.label << "\ncores\tmakespan_s\tspeedup\tefficiency\n";
            ordered_json sj{{"label", s.label}, {"rows", ordered_json::array()}};
            for (const auto& r : s.rows) {
                text << r.cores << '\t' << format_double(r.makespan) << '\t' << fixed(r.speedup, 4) << '\t'
                     << fixed(r.efficiency, 4) << '\n';
                sj["rows"].push_back({{"cores", r.cores},
                                      {"makespan_s", r.makespan},
                                      {"speedup", r.speedup},
                                      {"efficiency", r.efficiency}});
            }
            arr.push_back(std::move(sj));
        }
    }

    if (!report.granularity.empty()) {
        auto& arr = j["granularity"] = ordered_json::array();
        for (const auto& g : report.granularity) {
            text << "\n## granularity: " << g.label << " on " << g.cores << " cores\ntasks\texec_s\n";
            ordered_json gj{{"label", g.label}, {"cores", g.cores}, {"rows", ordered_json::array()}};
            for (const auto& r : g.rows) {
                text << r.tasks << '\t' << format_double(r.exec) << '\n';
                gj["rows"].push_back({{"tasks", r.tasks}, {"exec_s", r.exec}});
            }
            text << "monotone: " << (g.monotone ? "yes" : "no") << '\n';
            gj["monotone"] = g.monotone;
            arr.push_back(std::move(gj));
        }
    }

    if (!report.jobs.empty()) {
        text << "\n## jobs\njob_id\ttool\tcores\ttasks\twait_s\texec_s\tturnaround_s\n";
        auto& arr = j["jobs"] = ordered_json::array();
        for (const auto& r : report.jobs) {
            text << r.job_id << '\t' << r.tool << '\t' << r.cores << '\t' << r.tasks << '\t'
                 << format_double(r.wait) << '\t' << format_double(r.exec) << '\t'
                 << format_double(r.turnaround) << '\n';
            arr.push_back({{"job_id", r.job_id},
                           {"tool", r.tool},
                           {"cores", r.cores},
                           {"tasks", r.tasks},
                           {"wait_s", r.wait},
                           {"exec_s", r.exec},
                           {"turnaround_s", r.turnaround}});
        }
    }

    if (report.stragglers) {
        text << "\n## stragglers\nnode\tslowdown\ttasks\tmean_task_s\tmax_task_s\n";
        auto& arr = j["stragglers"] = ordered_json::array();
        for (const auto& n : *report.stragglers) {
            text << n.node << '\t' << format_double(n.slowdown) << '\t' << n.tasks << '\t'
                 << format_double(n.mean_task_s) << '\t' << format_double(n.max_task_s) << '\n';
            arr.push_back({{"node", n.node},
                           {"slowdown", n.slowdown},
                           {"tasks", n.tasks},
                           {"mean_task_s", n.mean_task_s},
                           {"max_task_s", n.max_task_s}});
        }
    }
    json << j.dump(2) << '\n';
}

std::vector<NodeTaskTimes> node_task_times(const sim::SimEventTrace& trace, const sim::SimClusterConfig& config)
{
    std::vector<NodeTaskTimes> out;
    for (const auto& n : config.nodes)
        out.push_back({n.name, n.slowdown, 0, 0.0, 0.0});
    std::map<std::pair<std::string, std::string>, double> started;
    for (const auto& e : trace) {
        const auto key = std::make_pair(e.job_id, e.task_id);
        if (e.kind == sim::EventKind::TaskStarted) {
            started[key] = e.time;
        } else if (e.kind == sim::EventKind::TaskFinished && e.node >= 0 &&
                   static_cast<std::size_t>(e.node) < out.size()) {
            auto it = started.find(key);
            if (it == started.end())
                continue;
            double d = e.time - it->second;
            auto& n = out[static_cast<std::size_t>(e.node)];
            n.mean_task_s += d;
            n.max_task_s = std::max(n.max_task_s, d);
            ++n.tasks;
        }
    }
    for (auto& n : out)
        if (n.tasks)
            n.mean_task_s /= static_cast<double>(n.tasks);
    return out;
}

RunReport simulation_report(const sim::Scenario& scenario, const sim::ScenarioRun& run)
{
    RunReport report;
    report.title = "simulation";

    // (tool, tasks) -> cores -> exec times; (tool, cores) -> tasks -> exec times
    std::map<std::pair<std::string, std::size_t>, std::map<int, std::vector<double>>> by_size;
    std::map<std::pair<std::string, int>, std::map<std::size_t, std::vector<double>>> by_cores;
    for (const auto& [job, timing] : run.jobs) {
        const std::string tool = job.tool.empty() ? job.job_id : job.tool;
        const std::size_t tasks = job.base_task_times.size();
        report.jobs.push_back(
            {job.job_id, tool, job.requested_cores, tasks, timing.wait, timing.exec, timing.turnaround});
        by_size[{tool, tasks}][job.requested_cores].push_back(timing.exec);
        by_cores[{tool, job.requested_cores}][tasks].push_back(timing.exec);
    }

    for (const auto& [key, groups] : by_size) {
        if (groups.size() < 2)
            continue;
        std::vector<RunMetrics> runs;
        for (const auto& [cores, execs] : groups) {
            for (std::size_t i = 0; i < execs.size(); ++i) {
                RunMetrics m;
                m.run_id = key.first + "-" + std::to_string(cores) + "-" + std::to_string(i);
                m.core_count = cores;
                m.stage_makespans[key.first] = execs[i];
                runs.push_back(std::move(m));
            }
        }
        report.speedups.push_back(
            {key.first + " (" + std::to_string(key.second) + (key.second == 1 ? " task)" : " tasks)"), speedup_table(runs)});
    }

    for (const auto& [key, groups] : by_cores) {
        if (groups.size() < 2)
            continue;
        GranularitySeries g;
        g.label = key.first;
        g.cores = key.second;
        for (const auto& [tasks, execs] : groups)
            g.rows.push_back({tasks, median(execs)});
        for (std::size_t i = 1; i < g.rows.size(); ++i)
            if (g.rows[i].exec > g.rows[i - 1].exec + 1e-9)
                g.monotone = false;
        report.granularity.push_back(std::move(g));
    }

    if (scenario.cluster.has_stragglers())
        report.stragglers = node_task_times(run.trace, scenario.cluster);
    return report;
}

}  // namespace mpipe::metrics
