#pragma once

#include "mpipe/simcluster.hpp"
#include "mpipe/text.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mpipe::metrics {

struct RunMetrics {
    std::string run_id;
    int core_count = 1;
    std::map<std::string, std::vector<double>> tool_times;  // per-task wall seconds
    std::map<std::string, double> stage_makespans;

    /// Stages run back to back, so the run's makespan is their sum.
    double makespan() const;
    /// Throws Error on negative times or a tool without a stage entry.
    void validate() const;

    bool operator==(const RunMetrics&) const = default;
};

std::string to_json(const RunMetrics& m);
RunMetrics run_metrics_from_json(std::string_view doc);

struct LedgerRow {
    std::string task_id;
    double timestamp = 0.0;
    std::string old_state;
    std::string new_state;
};

/// Rebuilds per-task wall times and stage makespans from an executor event
/// log. Task ids are `<stage>.<part>` or `<stage>`.
RunMetrics run_metrics_from_ledger(std::span<const LedgerRow> rows, std::string run_id, int core_count);

/// Median with the even-count rule: mean of the middle two.
double median(std::vector<double> values);

struct ToolShare {
    std::string tool;
    double median_time = 0.0;
    double percent = 0.0;
};

struct BreakdownReport {
    std::vector<ToolShare> tools;  // alphabetical
    double total_percent = 0.0;
    std::size_t runs = 0;
};

/// Per tool: median across runs of the run's summed tool time, then each
/// median as a percent of the sum of medians.
BreakdownReport median_breakdown(std::span<const RunMetrics> runs);

struct SpeedupRow {
    int cores = 0;
    double makespan = 0.0;
    double speedup = 1.0;
    double efficiency = 1.0;
};

/// Groups runs by core count, takes each group's median makespan, and compares
/// against the smallest core count. Needs at least two core counts.
std::vector<SpeedupRow> speedup_table(std::span<const RunMetrics> runs);

struct SpeedupSeries {
    std::string label;
    std::vector<SpeedupRow> rows;
};

struct GranularityRow {
    std::size_t tasks = 0;
    double exec = 0.0;
};

struct GranularitySeries {
    std::string label;
    int cores = 0;
    std::vector<GranularityRow> rows;  // ascending task count
    bool monotone = true;              // exec never grows as tasks get smaller
};

struct NodeTaskTimes {
    std::string node;
    double slowdown = 1.0;
    std::size_t tasks = 0;
    double mean_task_s = 0.0;
    double max_task_s = 0.0;
};

struct JobRow {
    std::string job_id;
    std::string tool;
    int cores = 0;
    std::size_t tasks = 0;
    double wait = 0.0;
    double exec = 0.0;
    double turnaround = 0.0;
};

struct RunReport {
    std::string title;
    std::vector<RunMetrics> runs;
    std::optional<BreakdownReport> breakdown;
    std::vector<SpeedupSeries> speedups;
    std::vector<GranularitySeries> granularity;
    std::vector<JobRow> jobs;
    std::optional<std::vector<NodeTaskTimes>> stragglers;  // only when a node is slowed
};

/// Human-readable text to `text`, the same content as one JSON document to `json`.
void write_run_report(const RunReport& report, std::ostream& text, std::ostream& json);

/// `tool<TAB>median_s<TAB>percent` rows.
void write_breakdown_tsv(const BreakdownReport& report, std::ostream& out);

/// Per-node task times from a trace.
std::vector<NodeTaskTimes> node_task_times(const sim::SimEventTrace& trace, const sim::SimClusterConfig& config);

/// Report for a simulated scenario: per-job rows, speedup series per tool with
/// several core counts, granularity series per (tool, cores) with several task
/// counts, and the straggler section when any node is slowed.
RunReport simulation_report(const sim::Scenario& scenario, const sim::ScenarioRun& run);

}  // namespace mpipe::metrics
