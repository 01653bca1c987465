#include "cli.hpp"

#include "mpipe/demo.hpp"
#include "mpipe/metrics.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

using namespace mpipe;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result invoke(std::vector<std::string> args)
{
    std::ostringstream out, err;
    int code = mpipe::cli::dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

int shell(const std::string& cmd)
{
    int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

const std::string kBin = MPIPE_BIN;
const std::string kConfigs = MPIPE_CONFIG_DIR;

}  // namespace

TEST_CASE("usage errors exit 2 and help exits 0")
{
    CHECK(invoke({}).code == 2);
    auto r = invoke({"frobnicate"});
    CHECK(r.code == 2);
    r = invoke({"split", "--bogus"});
    CHECK(r.code == 2);
    CHECK(r.err.find("Usage") != std::string::npos);
    CHECK(invoke({"--help"}).code == 0);
    CHECK(invoke({"run", "--help"}).code == 0);
    CHECK(invoke({"tool", "search", "--help"}).code == 0);
    CHECK(invoke({"tool"}).code == 2);
    CHECK(invoke({"split", "--input", "missing.fq", "--parts", "2", "--out-dir", "x"}).code == 2);
}

TEST_CASE("split then merge restores the file")
{
    testing::TempDir dir("cli-split");
    auto recs = testing::random_records(57, 3, true);
    seq::write_sequence_file(dir / "in.fq", recs);
    auto r = invoke({"split", "--input", (dir / "in.fq").string(), "--parts", "5", "--out-dir", (dir / "p").string()});
    REQUIRE(r.code == 0);
    std::vector<std::string> args{"merge", "--output", (dir / "out.fq").string()};
    for (int k = 4; k >= 0; --k)
        args.push_back((dir / ("p/part_" + std::to_string(k) + "_of_5.fq")).string());
    REQUIRE(invoke(args).code == 0);
    CHECK(testing::read_file(dir / "out.fq") == testing::read_file(dir / "in.fq"));
}

TEST_CASE("filter, classify, annotate and export")
{
    testing::TempDir dir("cli-data");
    auto b = demo::write_demo_bundle(dir / "d", 200, 5, kBin);
    const std::string d = dir.path().string();
    REQUIRE(invoke({"filter", "--input", b.reads.string(), "--output", d + "/f.fq", "--min-length", "100",
                 "--min-mean-quality", "20", "--report", d + "/filter.json"})
                .code == 0);
    auto kept = seq::read_sequence_file(dir / "f.fq");
    CHECK(kept.size() < 200);
    for (const auto& r : kept)
        CHECK(r.bases.size() >= 100);
    CHECK(invoke({"filter", "--input", b.reads.string(), "--output", d + "/x.fq", "--max-n-fraction", "2"}).code == 2);

    REQUIRE(invoke({"tool", "rrna-search", "--input", d + "/f.fq", "--taxonomy", b.taxonomy.string(), "--output",
                 d + "/hits.tsv"})
                .code == 0);
    auto r = invoke({"classify", "--hits", d + "/hits.tsv", "--taxonomy", b.taxonomy.string(), "--reads", d + "/f.fq",
                  "--output", d + "/a.tsv", "--hierarchy", d + "/h.txt", "--hierarchy-json", d + "/h.json"});
    REQUIRE(r.code == 0);
    CHECK(testing::read_file(dir / "h.txt").find("UNCLASSIFIED") != std::string::npos);
    REQUIRE(invoke({"filter", "--input", d + "/f.fq", "--exclude-ids", d + "/hits.tsv", "--output", d + "/m.fq"})
                .code == 0);
    CHECK(seq::read_sequence_file(dir / "m.fq").size() < kept.size());

    REQUIRE(invoke({"tool", "predict-genes", "--input", d + "/m.fq", "--output", d + "/g.tsv"}).code == 0);
    REQUIRE(invoke({"tool", "search", "--tool", "blastp", "--predictions", d + "/g.tsv", "--output", d + "/b.tsv"})
                .code == 0);
    REQUIRE(invoke({"annotate", "--predictions", d + "/g.tsv", "--evidence", "blastp:" + d + "/b.tsv", "--output",
                 d + "/merged.json"})
                .code == 0);
    CHECK(invoke({"annotate", "--predictions", d + "/g.tsv", "--evidence", "nocolon", "--output", d + "/z.json"})
              .code == 2);
    REQUIRE(invoke({"export", "--merged", d + "/merged.json", "--tsv", d + "/e.tsv", "--jsonl", d + "/e.jsonl"})
                .code == 0);
    CHECK(testing::read_file(dir / "e.tsv").rfind("#gene_id\t", 0) == 0);
    CHECK(invoke({"export", "--merged", d + "/merged.json"}).code == 2);
}

TEST_CASE("simulate is deterministic and writes every artifact")
{
    testing::TempDir dir("cli-sim");
    for (const char* out : {"a", "b"})
        REQUIRE(invoke({"simulate", "--scenario", kConfigs + "/straggler.cfg", "--out", (dir / out).string()}).code ==
                0);
    for (const char* f : {"trace.jsonl", "summary.tsv", "report.txt", "report.json"})
        CHECK(testing::read_file(dir / "a" / f) == testing::read_file(dir / "b" / f));
    auto report = testing::read_file(dir / "a" / "report.txt");
    CHECK(report.find("monotone: yes") != std::string::npos);
    CHECK(report.find("## stragglers") != std::string::npos);

    REQUIRE(invoke({"simulate", "--scenario", kConfigs + "/speedup.cfg", "--out", (dir / "s").string()}).code == 0);
    auto sp = testing::read_file(dir / "s" / "report.txt");
    CHECK(sp.find("128\t10\t4.0000\t1.0000") != std::string::npos);

    testing::write_file(dir / "bad.cfg", R"({"nodes": [], "jobs": []})");
    CHECK(invoke({"simulate", "--scenario", (dir / "bad.cfg").string(), "--out", (dir / "x").string()}).code == 2);
    testing::write_file(dir / "file", "");
    CHECK(invoke({"simulate", "--scenario", kConfigs + "/straggler.cfg", "--out", (dir / "file" / "sub").string()})
              .code == 2);
}

TEST_CASE("report over metrics files")
{
    testing::TempDir dir("cli-report");
    std::vector<std::string> args{"report", "--out", (dir / "rep").string()};
    for (int i = 0; i < 3; ++i) {
        metrics::RunMetrics m;
        m.run_id = "r" + std::to_string(i);
        m.core_count = i == 0 ? 4 : 8;
        m.tool_times = {{"a", {1.0 + i}}, {"b", {3.0}}};
        m.stage_makespans = {{"a", 1.0 + i}, {"b", 3.0}};
        auto p = dir / ("m" + std::to_string(i) + ".json");
        testing::write_file(p, metrics::to_json(m));
        args.push_back(p.string());
    }
    REQUIRE(invoke(args).code == 0);
    CHECK(testing::read_file(dir / "rep" / "breakdown.tsv") == "#tool\tmedian_s\tpercent\na\t2\t40.0000\nb\t3\t60.0000\n");
    CHECK(testing::read_file(dir / "rep" / "report.txt").find("## speedup: all runs") != std::string::npos);
    testing::write_file(dir / "bad.json", "{}");
    CHECK(invoke({"report", "--out", (dir / "rep2").string(), (dir / "bad.json").string()}).code == 2);
}

TEST_CASE("run exit codes")
{
    testing::TempDir dir("cli-run");
    auto recs = testing::random_records(12, 9, false);
    seq::write_sequence_file(dir / "in.fa", recs);
    const std::string d = dir.path().string();
    testing::write_file(dir / "ok.cfg", R"({"name": "ok", "stages": [
      {"id": "copy", "mode": "scatter", "command": "cp {input} {workdir}/out_{part}.fa", "outputs": ["{workdir}/out_{part}.fa"]}]})");
    testing::write_file(dir / "bad.cfg", R"({"name": "bad", "stages": [
      {"id": "copy", "mode": "scatter", "command": "exit 4 # {part}", "outputs": ["{workdir}/out_{part}.fa"]}]})");
    testing::write_file(dir / "invalid.cfg", R"({"name": "bad", "stages": [
      {"id": "copy", "mode": "scatter", "command": "true", "outputs": ["x.fa"]}]})");

    auto r = invoke({"run", "--spec", d + "/ok.cfg", "--input", d + "/in.fa", "--cores", "3", "--run-dir", d + "/r1"});
    CHECK(r.code == 0);
    CHECK(testing::read_file(dir / "r1/_results/copy/out_all.fa") == testing::read_file(dir / "in.fa"));
    CHECK(fs::exists(dir / "r1/metrics.json"));
    CHECK(fs::exists(dir / "r1/run.json"));
    // An existing run directory is never silently reused.
    CHECK(invoke({"run", "--spec", d + "/ok.cfg", "--input", d + "/in.fa", "--run-dir", d + "/r1"}).code == 2);
    CHECK(invoke({"run", "--spec", d + "/ok.cfg", "--input", d + "/in.fa", "--run-dir", d + "/r1", "--overwrite"})
              .code == 0);

    r = invoke({"run", "--spec", d + "/bad.cfg", "--input", d + "/in.fa", "--cores", "2", "--run-dir", d + "/r2"});
    CHECK(r.code == 1);
    CHECK(r.err.find("NonzeroExit") != std::string::npos);
    r = invoke({"run", "--spec", d + "/invalid.cfg", "--input", d + "/in.fa", "--run-dir", d + "/r3"});
    CHECK(r.code == 2);
    CHECK(r.err.find("{part}") != std::string::npos);

    r = invoke({"run", "--spec", d + "/ok.cfg", "--input", d + "/in.fa", "--cores", "2", "--backend", "sim",
             "--run-dir", d + "/r4"});
    CHECK(r.code == 0);
    auto m = metrics::run_metrics_from_json(testing::read_file(dir / "r4/metrics.json"));
    CHECK(m.stage_makespans.at("copy") == 1.0);

    ::setenv(cli::kRunRootEnv, (d + "/root").c_str(), 1);
    CHECK(invoke({"run", "--spec", d + "/ok.cfg", "--input", d + "/in.fa", "--run-id", "env"}).code == 0);
    ::unsetenv(cli::kRunRootEnv);
    CHECK(fs::exists(dir / "root/env/run.json"));
}

TEST_CASE("submit, status and wait")
{
    testing::TempDir dir("cli-submit");
    auto recs = testing::random_records(6, 2, false);
    seq::write_sequence_file(dir / "in.fa", recs);
    const std::string d = dir.path().string();
    testing::write_file(dir / "slow.cfg", R"({"name": "slow", "stages": [
      {"id": "nap", "mode": "scatter", "command": "sleep 0.3; cp {input} {workdir}/o_{part}.fa", "outputs": ["{workdir}/o_{part}.fa"]}]})");
    const std::string run_dir = d + "/run";
    REQUIRE(shell(kBin + " submit --spec " + d + "/slow.cfg --input " + d + "/in.fa --cores 2 --run-dir " + run_dir +
                  " > " + d + "/submit.out") == 0);
    CHECK(testing::read_file(dir / "submit.out").find(run_dir) != std::string::npos);
    CHECK(shell(kBin + " wait --run-dir " + run_dir + " --timeout 30 > /dev/null") == 0);
    CHECK(shell(kBin + " status --run-dir " + run_dir + " > " + d + "/status.out") == 0);
    auto status = testing::read_file(dir / "status.out");
    CHECK(status.find("run: succeeded") != std::string::npos);
    CHECK(status.find("nap.1\tSucceeded") != std::string::npos);
    CHECK(shell(kBin + " status --run-dir " + d + "/nope 2> /dev/null") == 2);
}
