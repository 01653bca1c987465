#include "cli.hpp"

#include "mpipe/annotation.hpp"
#include "mpipe/demo.hpp"
#include "mpipe/executor.hpp"
#include "mpipe/local_backend.hpp"
#include "mpipe/metrics.hpp"
#include "mpipe/pipeline.hpp"
#include "mpipe/seqdata.hpp"
#include "mpipe/sim_backend.hpp"
#include "mpipe/simcluster.hpp"
#include "mpipe/taxonomy.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace mpipe::cli {

namespace fs = std::filesystem;

namespace {

// Signals a usage or validation problem detected after argument parsing.
class UsageError : public Error {
public:
    using Error::Error;
};

std::string read_text(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw UsageError("cannot read '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ifstream open_in(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw UsageError("cannot read '" + p.string() + "'");
    return in;
}

// Creates the parent directory up front so a bad output path fails before any work.
std::ofstream open_out(const fs::path& p)
{
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw UsageError("cannot write '" + p.string() + "'");
    return out;
}

void ensure_writable(const fs::path& p)
{
    open_out(p);
}

void write_atomically(const fs::path& p, const std::string& content)
{
    fs::path tmp = p;
    tmp += ".tmp";
    {
        auto out = open_out(tmp);
        out << content;
        if (!out)
            throw Error("cannot write '" + tmp.string() + "'");
    }
    fs::rename(tmp, p);
}

fs::path self_exe()
{
    std::error_code ec;
    auto p = fs::read_symlink("/proc/self/exe", ec);
    return ec ? fs::path("mpipe") : p;
}

std::set<std::string> read_id_column(const fs::path& p)
{
    auto in = open_in(p);
    std::set<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line.front() == '#')
            continue;
        ids.insert(line.substr(0, line.find('\t')));
    }
    return ids;
}

taxonomy::TaxonomyTree load_taxonomy(const fs::path& p)
{
    auto in = open_in(p);
    auto edges = taxonomy::parse_taxonomy_tsv(in);
    return taxonomy::build_taxonomy(edges);
}

// ---------------------------------------------------------------- run / submit

struct RunArgs {
    std::string spec;
    std::string input;
    std::string backend = "local";
    int cores = 1;
    int workers = 0;
    std::string run_dir;
    std::string run_id;
    std::string user = "mpipe";
    double timeout = 3600.0;
    double poll = 0.05;
    bool overwrite = false;
};

struct PreparedRun {
    pipeline::PipelineSpec spec;
    std::vector<seq::SequenceRecord> dataset;
    fs::path run_dir;
    std::string run_id;
};

void add_run_options(CLI::App* sub, RunArgs& a)
{
    sub->add_option("--spec", a.spec, "Pipeline config file")->required();
    sub->add_option("--input", a.input, "Input reads (FASTA or FASTQ)")->required();
    sub->add_option("--backend", a.backend, "Execution backend")
        ->check(CLI::IsMember({"local", "sim"}))
        ->capture_default_str();
    sub->add_option("--cores", a.cores, "Core budget: number of parts per scatter stage")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--workers", a.workers, "Local worker processes (default: --cores)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--run-dir", a.run_dir,
                    std::string("Run directory (default: $") + kRunRootEnv + " or the config's workdir_root, "
                    "then the run id)");
    sub->add_option("--run-id", a.run_id, "Run id (default: pipeline name)");
    sub->add_option("--user", a.user, "Submitting user")->capture_default_str();
    sub->add_option("--timeout", a.timeout, "Per-stage timeout in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--poll-interval", a.poll, "Seconds between status polls")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_flag("--overwrite", a.overwrite, "Replace an existing run directory");
}

PreparedRun prepare_run(const RunArgs& a)
{
    PreparedRun p;
    p.spec = pipeline::parse_pipeline_spec(read_text(a.spec));
    p.dataset = seq::read_sequence_file(a.input);
    p.run_id = a.run_id.empty() ? p.spec.name : a.run_id;
    if (!a.run_dir.empty()) {
        p.run_dir = a.run_dir;
    } else {
        const char* env = std::getenv(kRunRootEnv);
        p.run_dir = fs::path(env && *env ? env : p.spec.workdir_root) / p.run_id;
    }
    p.run_dir = fs::absolute(p.run_dir).lexically_normal();
    std::error_code ec;
    if (fs::exists(p.run_dir, ec) && !fs::is_empty(p.run_dir, ec)) {
        if (!a.overwrite)
            throw UsageError("run directory '" + p.run_dir.string() + "' is not empty; use --overwrite");
        fs::remove_all(p.run_dir);
    }
    fs::create_directories(p.run_dir);
    return p;
}

nlohmann::ordered_json run_summary(const PreparedRun& p, const exec::RunResult& r)
{
    nlohmann::ordered_json j;
    j["run_id"] = p.run_id;
    j["pipeline"] = p.spec.name;
    j["status"] = r.succeeded() ? "succeeded" : "failed";
    j["stages"] = nlohmann::ordered_json::array();
    for (const auto& s : r.stages) {
        nlohmann::ordered_json sj{{"id", s.stage_id}, {"tasks", s.tasks.size()}, {"makespan_s", s.makespan_s}};
        sj["products"] = nlohmann::ordered_json::array();
        for (const auto& prod : s.products)
            sj["products"].push_back(prod.string());
        j["stages"].push_back(std::move(sj));
    }
    if (r.failure) {
        j["failure"] = {{"stage", r.failure->stage_id},
                        {"task", r.failure->task_id},
                        {"kind", std::string(exec::to_string(r.failure->reason.kind))},
                        {"detail", r.failure->reason.detail}};
    }
    return j;
}

int execute_run(const RunArgs& a, const PreparedRun& p, std::ostream& out, std::ostream& err)
{
    std::unique_ptr<exec::Backend> backend;
    if (a.backend == "local") {
        backend = std::make_unique<exec::LocalBackend>(a.workers > 0 ? a.workers : a.cores);
    } else {
        sim::SimClusterConfig cfg;
        cfg.nodes.push_back({"sim0", a.cores, 1.0});
        backend = std::make_unique<exec::SimBackend>(cfg, true);
    }
    exec::RunOptions opts;
    opts.run_root = p.run_dir;
    opts.run_id = p.run_id;
    opts.user = a.user;
    opts.wait.timeout_s = a.timeout;
    opts.wait.poll_interval_s = a.backend == "sim" ? 0.0 : a.poll;

    auto result = exec::run_pipeline(p.spec, p.dataset, *backend, a.cores, opts);
    {
        auto m = open_out(p.run_dir / "metrics.json");
        m << metrics::to_json(result.metrics);
    }
    for (const auto& s : result.stages) {
        out << "stage " << s.stage_id << ": " << s.tasks.size() << " task(s), makespan "
            << text::format_double(s.makespan_s) << " s\n";
        for (const auto& prod : s.products)
            out << "  " << prod.string() << '\n';
    }
    write_atomically(p.run_dir / "run.json", run_summary(p, result).dump(2) + "\n");
    if (!result.succeeded()) {
        const auto& f = *result.failure;
        err << "stage " << f.stage_id << " failed: task " << f.task_id << ": "
            << exec::to_string(f.reason.kind) << ": " << f.reason.detail << '\n';
        return kExitFailure;
    }
    out << "run " << p.run_id << " succeeded in " << p.run_dir.string() << '\n';
    return kExitOk;
}

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err)
{
    auto p = prepare_run(a);
    return execute_run(a, p, out, err);
}

int cmd_submit(const RunArgs& a, std::ostream& out, std::ostream& err)
{
    auto p = prepare_run(a);
    out.flush();
    err.flush();
    std::cout.flush();
    std::cerr.flush();
    pid_t pid = ::fork();
    if (pid < 0)
        throw Error("fork failed");
    if (pid == 0) {
        ::setsid();
        int fd = ::open((p.run_dir / "run.log").c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        int null_in = ::open("/dev/null", O_RDONLY);
        if (fd >= 0) {
            ::dup2(fd, 1);
            ::dup2(fd, 2);
        }
        if (null_in >= 0)
            ::dup2(null_in, 0);
        int code = kExitFailure;
        try {
            code = execute_run(a, p, std::cout, std::cerr);
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            nlohmann::ordered_json j{{"run_id", p.run_id}, {"pipeline", p.spec.name}, {"status", "failed"},
                                     {"failure", {{"detail", e.what()}}}};
            try {
                write_atomically(p.run_dir / "run.json", j.dump(2) + "\n");
            } catch (...) {
            }
        }
        std::cout.flush();
        std::cerr.flush();
        ::_exit(code);
    }
    out << p.run_dir.string() << '\n';
    return kExitOk;
}

int cmd_status(const std::string& run_dir, std::ostream& out)
{
    const fs::path dir = run_dir;
    if (!fs::is_directory(dir))
        throw UsageError("no run directory '" + dir.string() + "'");
    std::map<std::string, exec::LedgerEvent> latest;
    std::vector<std::string> order;
    if (std::ifstream in(dir / "ledger.jsonl"); in) {
        for (auto& e : exec::read_ledger(in)) {
            if (!latest.count(e.task_id))
                order.push_back(e.task_id);
            latest[e.task_id] = e;
        }
    }
    std::string status = "running";
    if (fs::exists(dir / "run.json"))
        status = nlohmann::json::parse(read_text(dir / "run.json")).value("status", std::string("failed"));
    out << "run: " << status << '\n';
    for (const auto& id : order) {
        const auto& e = latest[id];
        out << id << '\t' << exec::to_string(e.new_state);
        if (!e.reason.empty())
            out << '\t' << e.reason;
        out << '\n';
    }
    return status == "failed" ? kExitFailure : kExitOk;
}

int cmd_wait(const std::string& run_dir, double timeout, double poll, std::ostream& out, std::ostream& err)
{
    const fs::path dir = run_dir;
    if (!fs::is_directory(dir))
        throw UsageError("no run directory '" + dir.string() + "'");
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout);
    while (!fs::exists(dir / "run.json")) {
        if (std::chrono::steady_clock::now() >= deadline) {
            err << "timed out waiting for " << dir.string() << '\n';
            return kExitFailure;
        }
        std::this_thread::sleep_for(std::chrono::duration<double>(poll));
    }
    auto j = nlohmann::json::parse(read_text(dir / "run.json"));
    const std::string status = j.value("status", std::string("failed"));
    out << "run: " << status << '\n';
    if (status != "succeeded") {
        if (j.contains("failure"))
            err << j["failure"].dump() << '\n';
        return kExitFailure;
    }
    return kExitOk;
}

// ---------------------------------------------------------------- simulate / report

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir, std::ostream& out)
{
    const fs::path dir = out_dir;
    for (const char* name : {"trace.jsonl", "summary.tsv", "report.txt", "report.json"})
        ensure_writable(dir / name);
    sim::Scenario scenario;
    try {
        scenario = sim::parse_scenario(read_text(scenario_path));
    } catch (const Error& e) {
        throw UsageError(scenario_path + ": " + e.what());
    }
    auto run = sim::run_scenario(scenario);
    open_out(dir / "trace.jsonl") << sim::trace_jsonl(run.trace, scenario.cluster);
    open_out(dir / "summary.tsv") << sim::summary_tsv(run);
    auto report = metrics::simulation_report(scenario, run);
    report.title = "simulation: " + fs::path(scenario_path).filename().string();
    auto text = open_out(dir / "report.txt");
    auto json = open_out(dir / "report.json");
    metrics::write_run_report(report, text, json);
    out << "simulated " << run.jobs.size() << " job(s); outputs in " << dir.string() << '\n';
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out_dir, const std::string& title,
               std::ostream& out)
{
    const fs::path dir = out_dir;
    for (const char* name : {"report.txt", "report.json", "breakdown.tsv"})
        ensure_writable(dir / name);
    metrics::RunReport report;
    report.title = title;
    for (const auto& f : files) {
        try {
            report.runs.push_back(metrics::run_metrics_from_json(read_text(f)));
        } catch (const UsageError&) {
            throw;
        } catch (const Error& e) {
            throw UsageError(f + ": " + e.what());
        }
    }
    try {
        report.breakdown = metrics::median_breakdown(report.runs);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    std::set<int> cores;
    for (const auto& r : report.runs)
        cores.insert(r.core_count);
    if (cores.size() >= 2)
        report.speedups.push_back({"all runs", metrics::speedup_table(report.runs)});
    auto text = open_out(dir / "report.txt");
    auto json = open_out(dir / "report.json");
    metrics::write_run_report(report, text, json);
    auto tsv = open_out(dir / "breakdown.tsv");
    metrics::write_breakdown_tsv(*report.breakdown, tsv);
    out << "report over " << report.runs.size() << " run(s) in " << dir.string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- data commands

struct FilterArgs {
    std::string input, output, exclude_ids, report;
    seq::FilterParams params;
    int part = -1;
};

int cmd_filter(const FilterArgs& a, std::ostream& out)
{
    a.params.validate();
    ensure_writable(a.output);
    if (!a.report.empty())
        ensure_writable(a.report);
    auto records = seq::read_sequence_file(a.input);
    std::size_t masked = 0;
    if (!a.exclude_ids.empty()) {
        auto m = seq::mask_records(records, read_id_column(a.exclude_ids));
        masked = records.size() - m.records.size();
        records = std::move(m.records);
    }
    auto result = seq::quality_filter(records, a.params);
    seq::write_sequence_file(a.output, result.kept);
    const auto& r = result.report;
    if (a.part >= 0)
        out << "part " << a.part << ": ";
    out << "kept " << r.kept << ", masked " << masked << ", rejected " << r.rejected() << " (length "
        << r.rejected_length << ", n_fraction " << r.rejected_n_fraction << ", mean_quality "
        << r.rejected_mean_quality << ")\n";
    if (!a.report.empty()) {
        nlohmann::ordered_json j{{"kept", r.kept},
                                 {"masked", masked},
                                 {"rejected_length", r.rejected_length},
                                 {"rejected_n_fraction", r.rejected_n_fraction},
                                 {"rejected_mean_quality", r.rejected_mean_quality}};
        open_out(a.report) << j.dump(2) << '\n';
    }
    return kExitOk;
}

int cmd_split(const std::string& input, std::size_t parts, const std::string& out_dir, std::ostream& out)
{
    const fs::path dir = out_dir;
    fs::create_directories(dir);
    auto records = seq::read_sequence_file(input);
    const auto ext = std::string(seq::extension_for(seq::natural_format(records)));
    for (const auto& p : seq::split_records(records, parts)) {
        fs::path f = dir / ("part_" + std::to_string(p.index) + "_of_" + std::to_string(parts) + ext);
        seq::write_sequence_file(f, p.records);
        out << f.string() << '\n';
    }
    return kExitOk;
}

int cmd_merge(const std::vector<std::string>& parts, const std::string& output, std::ostream& out)
{
    ensure_writable(output);
    static const std::regex name(R"(part_(\d+)_of_(\d+)\.[A-Za-z]+)");
    std::vector<seq::Partition> partitions;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        seq::Partition p;
        std::smatch m;
        const std::string base = fs::path(parts[k]).filename().string();
        if (std::regex_match(base, m, name)) {
            p.index = std::stoul(m[1]);
            p.n_parts = std::stoul(m[2]);
        } else {
            p.index = k;
            p.n_parts = parts.size();
        }
        p.records = seq::read_sequence_file(parts[k]);
        partitions.push_back(std::move(p));
    }
    auto merged = seq::merge_parts(std::move(partitions));
    seq::write_sequence_file(output, merged);
    out << "merged " << merged.size() << " record(s) into " << output << '\n';
    return kExitOk;
}

struct ClassifyArgs {
    std::string hits, taxonomy, reads, output, hierarchy, hierarchy_json;
    std::size_t min_hits = 1;
};

int cmd_classify(const ClassifyArgs& a, std::ostream& out)
{
    ensure_writable(a.output);
    if (!a.hierarchy.empty())
        ensure_writable(a.hierarchy);
    if (!a.hierarchy_json.empty())
        ensure_writable(a.hierarchy_json);
    auto tree = load_taxonomy(a.taxonomy);
    auto hin = open_in(a.hits);
    auto hits = taxonomy::parse_hits_tsv(hin);
    if (!a.reads.empty()) {
        std::vector<std::string> ids;
        for (const auto& r : seq::read_sequence_file(a.reads))
            ids.push_back(r.id);
        taxonomy::add_reads_without_hits(hits, ids);
    }
    auto assignments = taxonomy::classify_reads(hits, tree, a.min_hits);
    {
        auto o = open_out(a.output);
        taxonomy::write_assignments_tsv(o, assignments);
    }
    auto counts = taxonomy::hierarchy_counts(assignments, tree);
    if (!a.hierarchy.empty()) {
        auto o = open_out(a.hierarchy);
        taxonomy::write_hierarchy_text(o, tree, counts);
    }
    if (!a.hierarchy_json.empty())
        open_out(a.hierarchy_json) << taxonomy::hierarchy_json(tree, counts);
    out << "classified " << assignments.size() - counts.unclassified << " of " << assignments.size()
        << " read(s)\n";
    return kExitOk;
}

int cmd_annotate(const std::vector<std::string>& predictions, const std::vector<std::string>& evidence,
                 const std::string& output, std::ostream& out)
{
    ensure_writable(output);
    std::vector<annotation::GenePrediction> genes;
    for (const auto& f : predictions) {
        auto in = open_in(f);
        auto part = annotation::parse_gene_predictions(in);
        genes.insert(genes.end(), part.begin(), part.end());
    }
    std::vector<std::vector<annotation::Evidence>> sets;
    for (const auto& spec : evidence) {
        auto colon = spec.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size())
            throw UsageError("--evidence expects TOOL:PATH, got '" + spec + "'");
        auto in = open_in(spec.substr(colon + 1));
        sets.push_back(annotation::parse_evidence_table(in, spec.substr(0, colon)));
    }
    auto merged = annotation::merge_annotations(genes, sets);
    open_out(output) << annotation::merged_to_json(merged);
    out << "merged " << merged.records.size() << " gene(s), " << merged.orphans.size()
        << " orphan evidence row(s)\n";
    return kExitOk;
}

int cmd_export(const std::string& merged_path, const std::string& tsv, const std::string& jsonl,
               const std::string& library, std::ostream& out)
{
    if (tsv.empty() && jsonl.empty())
        throw UsageError("export needs --tsv and/or --jsonl");
    if (!tsv.empty())
        ensure_writable(tsv);
    if (!jsonl.empty())
        ensure_writable(jsonl);
    auto merged = annotation::merged_from_json(read_text(merged_path));
    if (!tsv.empty()) {
        auto o = open_out(tsv);
        annotation::export_tsv(merged.records, o);
    }
    if (!jsonl.empty()) {
        auto o = open_out(jsonl);
        annotation::export_metarep_jsonl(merged.records, library, o);
    }
    out << "exported " << merged.records.size() << " record(s)\n";
    return kExitOk;
}

// ---------------------------------------------------------------- tool group

int cmd_demo_data(const std::string& dir, std::size_t n, std::uint64_t seed, const std::string& bin,
                  std::ostream& out)
{
    auto b = demo::write_demo_bundle(dir, n, seed, bin.empty() ? self_exe() : fs::path(bin));
    out << b.reads.string() << '\n' << b.taxonomy.string() << '\n' << b.pipeline.string() << '\n';
    return kExitOk;
}

int cmd_rrna_search(const std::string& input, const std::string& tax, const std::string& output, int part,
                    std::ostream& out)
{
    ensure_writable(output);
    auto tree = load_taxonomy(tax);
    auto reads = seq::read_sequence_file(input);
    auto hits = demo::synthetic_rrna_hits(reads, tree);
    {
        auto o = open_out(output);
        demo::write_hits_tsv(o, hits);
    }
    if (part >= 0)
        out << "part " << part << ": ";
    out << hits.size() << " of " << reads.size() << " read(s) with rRNA hits\n";
    return kExitOk;
}

int cmd_predict_genes(const std::string& input, const std::string& output, std::size_t min_nt, int part,
                      std::ostream& out)
{
    ensure_writable(output);
    auto contigs = seq::read_sequence_file(input);
    auto genes = demo::predict_genes(contigs, min_nt);
    {
        auto o = open_out(output);
        annotation::write_gene_predictions(o, genes);
    }
    if (part >= 0)
        out << "part " << part << ": ";
    out << genes.size() << " gene(s) on " << contigs.size() << " sequence(s)\n";
    return kExitOk;
}

int cmd_search(const std::string& tool, const std::string& predictions, const std::string& output,
               std::ostream& out)
{
    ensure_writable(output);
    auto in = open_in(predictions);
    auto genes = annotation::parse_gene_predictions(in);
    auto hits = demo::synthetic_search(genes, tool);
    {
        auto o = open_out(output);
        annotation::write_evidence_table(o, hits);
    }
    out << tool << ": " << hits.size() << " hit(s) for " << genes.size() << " gene(s)\n";
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"mpipe: scatter-gather metagenomics pipelines on local or simulated clusters", "mpipe"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "Run a pipeline and block until it finishes");
    add_run_options(run, run_args);
    RunArgs submit_args;
    auto* submit = app.add_subcommand("submit", "Start a pipeline run in the background and print its run directory");
    add_run_options(submit, submit_args);

    std::string status_dir;
    auto* status = app.add_subcommand("status", "Show the task states of a run");
    status->add_option("--run-dir", status_dir, "Run directory")->required();

    std::string wait_dir;
    double wait_timeout = 3600.0, wait_poll = 0.2;
    auto* wait = app.add_subcommand("wait", "Block until a submitted run finishes");
    wait->add_option("--run-dir", wait_dir, "Run directory")->required();
    wait->add_option("--timeout", wait_timeout, "Seconds to wait")->check(CLI::PositiveNumber)->capture_default_str();
    wait->add_option("--poll-interval", wait_poll, "Seconds between checks")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    std::string scenario, sim_out;
    auto* simulate = app.add_subcommand("simulate", "Run a cluster scenario on the discrete-event simulator");
    simulate->add_option("--scenario", scenario, "Scenario config file")->required()->check(CLI::ExistingFile);
    simulate->add_option("--out", sim_out, "Output directory")->required();

    ClassifyArgs cls;
    auto* classify = app.add_subcommand("classify", "Assign reads to the LCA of their rRNA hits");
    classify->add_option("--hits", cls.hits, "read_id<TAB>taxon_id hit table")->required();
    classify->add_option("--taxonomy", cls.taxonomy, "Taxonomy TSV")->required();
    classify->add_option("--reads", cls.reads, "Reads; those without hits are reported unclassified");
    classify->add_option("--min-hits", cls.min_hits, "Hits needed to classify a read")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    classify->add_option("--output", cls.output, "Assignments TSV")->required();
    classify->add_option("--hierarchy", cls.hierarchy, "Indented hierarchy text");
    classify->add_option("--hierarchy-json", cls.hierarchy_json, "Hierarchy JSON");

    std::string split_in, split_dir;
    std::size_t split_parts = 1;
    auto* split = app.add_subcommand("split", "Split reads round-robin into parts");
    split->add_option("--input", split_in, "Reads")->required();
    split->add_option("--parts", split_parts, "Number of parts")->required()->check(CLI::PositiveNumber);
    split->add_option("--out-dir", split_dir, "Directory for part_<k>_of_<n> files")->required();

    std::vector<std::string> merge_parts;
    std::string merge_out;
    auto* merge = app.add_subcommand("merge", "Merge parts written by split back into one file");
    merge->add_option("parts", merge_parts, "Part files")->required();
    merge->add_option("--output", merge_out, "Merged file")->required();

    FilterArgs flt;
    auto* filter = app.add_subcommand("filter", "Quality-filter reads and optionally mask reads by id");
    filter->add_option("--input", flt.input, "Reads")->required();
    filter->add_option("--output", flt.output, "Kept reads")->required();
    filter->add_option("--min-length", flt.params.min_length, "Minimum length")->capture_default_str();
    filter->add_option("--min-mean-quality", flt.params.min_mean_quality, "Minimum mean Phred score")
        ->capture_default_str();
    filter->add_option("--max-n-fraction", flt.params.max_n_fraction, "Maximum fraction of N bases")
        ->capture_default_str();
    filter->add_option("--exclude-ids", flt.exclude_ids, "TSV whose first column lists ids to drop");
    filter->add_option("--report", flt.report, "JSON filter counts");
    filter->add_option("--part", flt.part, "Part index, for log lines");

    std::vector<std::string> ann_pred, ann_ev;
    std::string ann_out;
    auto* annotate = app.add_subcommand("annotate", "Merge gene predictions with tool evidence");
    annotate->add_option("--predictions", ann_pred, "Gene prediction TSV (repeatable)")->required();
    annotate->add_option("--evidence", ann_ev, "TOOL:PATH evidence table (repeatable)");
    annotate->add_option("--output", ann_out, "Merged annotation JSON")->required();

    std::string exp_in, exp_tsv, exp_jsonl, exp_lib = "demo";
    auto* exportc = app.add_subcommand("export", "Write canonical TSV and Metarep-style JSONL");
    exportc->add_option("--merged", exp_in, "Merged annotation JSON")->required();
    exportc->add_option("--tsv", exp_tsv, "TSV output");
    exportc->add_option("--jsonl", exp_jsonl, "JSONL output");
    exportc->add_option("--library", exp_lib, "Library id for JSONL rows")->capture_default_str();

    std::vector<std::string> rep_files;
    std::string rep_out, rep_title = "pipeline runs";
    auto* report = app.add_subcommand("report", "Breakdown and speedup report over run metrics");
    report->add_option("metrics", rep_files, "metrics.json files")->required();
    report->add_option("--out", rep_out, "Output directory")->required();
    report->add_option("--title", rep_title, "Report title")->capture_default_str();

    auto* tool = app.add_subcommand("tool", "Built-in stand-ins for external analysis tools");
    tool->require_subcommand(1);
    std::string demo_dir, demo_bin;
    std::size_t demo_n = 1000;
    std::uint64_t demo_seed = 42;
    auto* demo_data = tool->add_subcommand("demo-data", "Write synthetic reads, taxonomy and demo pipeline");
    demo_data->add_option("--out", demo_dir, "Output directory")->required();
    demo_data->add_option("--reads", demo_n, "Number of reads")->capture_default_str();
    demo_data->add_option("--seed", demo_seed, "Random seed")->capture_default_str();
    demo_data->add_option("--mpipe", demo_bin, "mpipe binary the pipeline calls (default: this one)");

    std::string rr_in, rr_tax, rr_out;
    int rr_part = -1;
    auto* rrna = tool->add_subcommand("rrna-search", "Synthetic rRNA search");
    rrna->add_option("--input", rr_in, "Reads")->required();
    rrna->add_option("--taxonomy", rr_tax, "Taxonomy TSV")->required();
    rrna->add_option("--output", rr_out, "Hit table")->required();
    rrna->add_option("--part", rr_part, "Part index, for log lines");

    std::string pg_in, pg_out;
    std::size_t pg_min = 60;
    int pg_part = -1;
    auto* predict = tool->add_subcommand("predict-genes", "ORF-based gene prediction");
    predict->add_option("--input", pg_in, "Contigs or reads")->required();
    predict->add_option("--output", pg_out, "Gene prediction TSV")->required();
    predict->add_option("--min-nt", pg_min, "Minimum ORF length in bases")->capture_default_str();
    predict->add_option("--part", pg_part, "Part index, for log lines");

    std::string se_tool, se_pred, se_out;
    auto* search = tool->add_subcommand("search", "Synthetic protein or enzyme search");
    search->add_option("--tool", se_tool, "Tool")->required()->check(CLI::IsMember({"blastp", "priam"}));
    search->add_option("--predictions", se_pred, "Gene prediction TSV")->required();
    search->add_option("--output", se_out, "Evidence table")->required();

    std::vector<std::string> argv_store{"mpipe"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store)
        argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (run->parsed())
            return cmd_run(run_args, out, err);
        if (submit->parsed())
            return cmd_submit(submit_args, out, err);
        if (status->parsed())
            return cmd_status(status_dir, out);
        if (wait->parsed())
            return cmd_wait(wait_dir, wait_timeout, wait_poll, out, err);
        if (simulate->parsed())
            return cmd_simulate(scenario, sim_out, out);
        if (classify->parsed())
            return cmd_classify(cls, out);
        if (split->parsed())
            return cmd_split(split_in, split_parts, split_dir, out);
        if (merge->parsed())
            return cmd_merge(merge_parts, merge_out, out);
        if (filter->parsed())
            return cmd_filter(flt, out);
        if (annotate->parsed())
            return cmd_annotate(ann_pred, ann_ev, ann_out, out);
        if (exportc->parsed())
            return cmd_export(exp_in, exp_tsv, exp_jsonl, exp_lib, out);
        if (report->parsed())
            return cmd_report(rep_files, rep_out, rep_title, out);
        if (demo_data->parsed())
            return cmd_demo_data(demo_dir, demo_n, demo_seed, demo_bin, out);
        if (rrna->parsed())
            return cmd_rrna_search(rr_in, rr_tax, rr_out, rr_part, out);
        if (predict->parsed())
            return cmd_predict_genes(pg_in, pg_out, pg_min, pg_part, out);
        if (search->parsed())
            return cmd_search(se_tool, se_pred, se_out, out);
    } catch (const pipeline::ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const exec::PlanError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const exec::CapacityError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        // Remaining errors are inputs the owning module rejected, which
        // counts as validation.
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    err << app.help();
    return kExitUsage;
}

int dispatch(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, std::cout, std::cerr);
}

}  // namespace mpipe::cli
