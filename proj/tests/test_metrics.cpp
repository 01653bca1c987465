#include "mpipe/metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace mpipe;
using namespace mpipe::metrics;

namespace {

RunMetrics run(std::string id, int cores, std::map<std::string, std::vector<double>> tools)
{
    RunMetrics m;
    m.run_id = std::move(id);
    m.core_count = cores;
    m.tool_times = std::move(tools);
    for (const auto& [tool, times] : m.tool_times) {
        double s = 0;
        for (double t : times)
            s += t;
        m.stage_makespans[tool] = s / cores;
    }
    return m;
}

RunMetrics with_makespan(std::string id, int cores, double makespan)
{
    RunMetrics m;
    m.run_id = std::move(id);
    m.core_count = cores;
    m.stage_makespans["s"] = makespan;
    return m;
}

std::pair<std::string, std::string> render(const RunReport& r)
{
    std::ostringstream t, j;
    write_run_report(r, t, j);
    return {t.str(), j.str()};
}

}  // namespace

TEST_CASE("median")
{
    CHECK(median({10, 12, 100}) == 12);
    CHECK(median({4, 1, 3, 2}) == 2.5);
    CHECK(median({7}) == 7);
    CHECK_THROWS_AS(median({}), Error);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> v(1 + rng() % 12);
        for (auto& x : v)
            x = static_cast<double>(rng() % 1000) / 8.0;
        CHECK(median(v) == oracle::median(v));
    }
}

TEST_CASE("percent of medians breakdown")
{
    // Per-run totals: X = 10, 12, 100; Y = 30, 20, 25.
    std::vector<RunMetrics> runs{run("r1", 4, {{"X", {4, 6}}, {"Y", {30}}}),
                                 run("r2", 4, {{"X", {12}}, {"Y", {5, 15}}}),
                                 run("r3", 4, {{"X", {50, 50}}, {"Y", {25}}})};
    auto b = median_breakdown(runs);
    REQUIRE(b.tools.size() == 2);
    CHECK(b.runs == 3);
    CHECK(b.tools[0].tool == "X");
    CHECK(b.tools[0].median_time == 12);
    CHECK(b.tools[1].median_time == 25);
    CHECK(b.tools[0].percent == doctest::Approx(100.0 * 12 / 37));
    CHECK(b.total_percent == doctest::Approx(100.0).epsilon(1e-12));

    std::swap(runs[0], runs[2]);
    auto again = median_breakdown(runs);
    CHECK(again.tools[0].percent == b.tools[0].percent);

    auto single = median_breakdown(std::span(runs.data(), 1));
    CHECK(single.tools[0].percent == doctest::Approx(100.0 * 100 / 125));

    runs[1].tool_times["Z"] = {1};
    CHECK_THROWS_AS(median_breakdown(runs), Error);
    CHECK_THROWS_AS(median_breakdown(std::span<const RunMetrics>{}), Error);
}

TEST_CASE("breakdown percents sum to 100 for random inputs")
{
    std::mt19937_64 rng(8);
    for (int i = 0; i < 100; ++i) {
        std::size_t n_tools = 1 + rng() % 6, n_runs = 1 + rng() % 5;
        std::vector<RunMetrics> runs;
        for (std::size_t r = 0; r < n_runs; ++r) {
            std::map<std::string, std::vector<double>> tools;
            for (std::size_t t = 0; t < n_tools; ++t)
                tools["tool" + std::to_string(t)] = {static_cast<double>(rng() % 100000) / 7.0};
            runs.push_back(run("r" + std::to_string(r), 1, tools));
        }
        CHECK(std::abs(median_breakdown(runs).total_percent - 100.0) <= 0.01);
    }
    std::vector<RunMetrics> zero{run("z", 1, {{"a", {0}}, {"b", {0}}})};
    auto b = median_breakdown(zero);
    CHECK(b.tools[0].percent == 50.0);
}

TEST_CASE("speedup table")
{
    std::vector<RunMetrics> runs{with_makespan("a", 64, 20), with_makespan("b", 32, 40), with_makespan("c", 128, 10),
                                 with_makespan("d", 32, 44), with_makespan("e", 32, 39)};
    auto rows = speedup_table(runs);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].cores == 32);
    CHECK(rows[0].makespan == 40);
    CHECK(rows[0].speedup == 1.0);
    CHECK(rows[1].speedup == 2.0);
    CHECK(rows[2].speedup == 4.0);
    CHECK(rows[2].efficiency == 1.0);

    std::vector<RunMetrics> flat{with_makespan("a", 32, 100), with_makespan("b", 64, 100)};
    auto f = speedup_table(flat);
    CHECK(f[1].speedup == 1.0);
    CHECK(f[1].efficiency == 0.5);
    CHECK_THROWS_AS(speedup_table(std::span(flat.data(), 1)), Error);
}

TEST_CASE("metrics json round trip and validation")
{
    auto m = run("r", 8, {{"filter", {1.5, 2.25}}, {"annotate", {10}}});
    CHECK(run_metrics_from_json(to_json(m)) == m);
    CHECK(m.makespan() == doctest::Approx(3.75 / 8 + 10.0 / 8));
    auto bad = m;
    bad.tool_times["filter"].push_back(-1);
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = m;
    bad.stage_makespans.erase("filter");
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_THROWS_AS(run_metrics_from_json("{}"), Error);
}

TEST_CASE("metrics from an executor ledger")
{
    std::vector<LedgerRow> rows{{"qc.0", 0, "Pending", "Queued"},  {"qc.1", 0, "Pending", "Queued"},
                                {"qc.0", 1, "Queued", "Running"},  {"qc.1", 2, "Queued", "Running"},
                                {"qc.0", 4, "Running", "Succeeded"}, {"qc.1", 7, "Running", "Succeeded"},
                                {"sum", 7, "Pending", "Queued"},   {"sum", 8, "Queued", "Running"},
                                {"sum", 9.5, "Running", "Succeeded"}};
    auto m = run_metrics_from_ledger(rows, "run", 2);
    CHECK(m.tool_times.at("qc") == std::vector<double>{3, 5});
    CHECK(m.stage_makespans.at("qc") == 6);
    CHECK(m.stage_makespans.at("sum") == 1.5);
    CHECK(m.makespan() == 7.5);
}

TEST_CASE("report rendering")
{
    RunReport r;
    r.title = "t";
    r.runs = {run("b", 8, {{"X", {2}}}), run("a", 4, {{"X", {2}}})};
    r.breakdown = median_breakdown(r.runs);
    auto [text, json] = render(r);
    CHECK(text.find("## speedup") == std::string::npos);
    CHECK(text.find("## stragglers") == std::string::npos);
    CHECK(json.find("\"speedups\"") == std::string::npos);
    CHECK(text.find("a\t4\t") < text.find("b\t8\t"));
    CHECK(text.find("X\t2\t100.0000") != std::string::npos);
    CHECK(render(r) == std::make_pair(text, json));

    r.speedups.push_back({"x", speedup_table(r.runs)});
    auto [text2, json2] = render(r);
    CHECK(text2.find("## speedup: x") != std::string::npos);
    CHECK(json2.find("\"efficiency\"") != std::string::npos);

    std::ostringstream tsv;
    write_breakdown_tsv(*r.breakdown, tsv);
    CHECK(tsv.str() == "#tool\tmedian_s\tpercent\nX\t2\t100.0000\n");
}

TEST_CASE("simulation report sections")
{
    auto straggly = sim::parse_scenario(R"({"nodes": [{"name": "f", "cores": 2}, {"name": "s", "cores": 2, "slowdown": 3}],
      "jobs": [{"id": "a", "tool": "t", "cores": 4, "tasks": 4, "base_time_s": 10},
               {"id": "b", "tool": "t", "cores": 4, "tasks": 8, "base_time_s": 5, "arrival_s": 100}]})");
    auto rep = simulation_report(straggly, sim::run_scenario(straggly));
    REQUIRE(rep.stragglers);
    CHECK((*rep.stragglers)[1].max_task_s == 30);
    REQUIRE(rep.granularity.size() == 1);
    CHECK(rep.granularity[0].monotone);
    CHECK(rep.granularity[0].rows[0].exec == 30);
    CHECK(rep.speedups.empty());

    auto even = sim::parse_scenario(R"({"nodes": [{"name": "n", "cores": 8}],
      "jobs": [{"id": "a", "cores": 4, "tool": "t", "tasks": 8, "base_time_s": 1},
               {"id": "b", "cores": 8, "tool": "t", "tasks": 8, "base_time_s": 1, "arrival_s": 10}]})");
    auto rep2 = simulation_report(even, sim::run_scenario(even));
    CHECK_FALSE(rep2.stragglers);
    REQUIRE(rep2.speedups.size() == 1);
    CHECK(rep2.speedups[0].rows[1].speedup == 2.0);
    auto [text, json] = render(rep2);
    CHECK(text.find("## stragglers") == std::string::npos);
}
