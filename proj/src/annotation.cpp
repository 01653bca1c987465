#include "mpipe/annotation.hpp"

#include <json.hpp>

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>

namespace mpipe::annotation {

using nlohmann::ordered_json;

namespace {

template <typename RowFn>
void for_each_row(std::istream& in, std::size_t fields, const char* layout, RowFn&& fn)
{
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line.front() == '#')
            continue;
        auto f = text::split(line, '\t');
        if (f.size() != fields)
            throw ParseError(lineno, "expected " + std::to_string(fields) + " fields (" + layout +
                                         "), got " + std::to_string(f.size()));
        fn(f, lineno);
    }
}

}  // namespace

bool evidence_before(const Evidence& a, const Evidence& b)
{
    if (a.evalue != b.evalue)
        return a.evalue < b.evalue;
    if (a.score != b.score)
        return a.score > b.score;
    return std::tie(a.tool, a.subject_id, a.description, a.gene_id) <
           std::tie(b.tool, b.subject_id, b.description, b.gene_id);
}

std::vector<GenePrediction> parse_gene_predictions(std::istream& in)
{
    std::vector<GenePrediction> out;
    std::set<std::string> ids;
    for_each_row(in, 5, "gene_id contig_id start end strand", [&](const auto& f, std::size_t ln) {
        GenePrediction g;
        g.gene_id = std::string(f[0]);
        g.contig_id = std::string(f[1]);
        if (g.gene_id.empty() || g.contig_id.empty())
            throw ParseError(ln, "empty gene or contig id");
        if (!text::parse_long(f[2], g.start) || !text::parse_long(f[3], g.end))
            throw ParseError(ln, "start/end must be integers");
        if (g.start < 1)
            throw ParseError(ln, "start must be >= 1");
        if (g.end < g.start)
            throw ParseError(ln, "end " + std::to_string(g.end) + " < start " + std::to_string(g.start));
        if (f[4] != "+" && f[4] != "-")
            throw ParseError(ln, "strand must be + or -");
        g.strand = f[4].front();
        if (!ids.insert(g.gene_id).second)
            throw ParseError(ln, "duplicate gene id '" + g.gene_id + "'");
        out.push_back(std::move(g));
    });
    return out;
}

std::vector<Evidence> parse_evidence_table(std::istream& in, const std::string& tool)
{
    if (tool.empty())
        throw Error("evidence tool name is empty");
    std::vector<Evidence> out;
    for_each_row(in, 5, "gene_id subject_id score evalue description", [&](const auto& f, std::size_t ln) {
        Evidence e;
        e.gene_id = std::string(f[0]);
        e.tool = tool;
        e.subject_id = std::string(f[1]);
        if (e.gene_id.empty())
            throw ParseError(ln, "empty gene id");
        if (!text::parse_double(f[2], e.score))
            throw ParseError(ln, "score is not a number");
        if (!text::parse_double(f[3], e.evalue))
            throw ParseError(ln, "evalue is not a number");
        if (e.evalue < 0)
            throw ParseError(ln, "negative evalue");
        e.description = std::string(f[4]);
        out.push_back(std::move(e));
    });
    return out;
}

MergeResult merge_annotations(std::span<const GenePrediction> predictions,
                              std::span<const std::vector<Evidence>> evidence_sets)
{
    MergeResult res;
    std::map<std::string, std::size_t> by_gene;
    res.records.reserve(predictions.size());
    for (const auto& p : predictions) {
        if (!by_gene.emplace(p.gene_id, res.records.size()).second)
            throw Error("duplicate gene id '" + p.gene_id + "' across scatter parts");
        res.records.push_back({p, {}});
    }
    for (const auto& set : evidence_sets) {
        for (const auto& e : set) {
            if (e.tool.empty())
                throw Error("evidence for '" + e.gene_id + "' has no tool");
            if (e.evalue < 0)
                throw Error("evidence for '" + e.gene_id + "' has a negative evalue");
            auto it = by_gene.find(e.gene_id);
            if (it == by_gene.end())
                res.orphans.push_back(e);
            else
                res.records[it->second].evidences.push_back(e);
        }
    }
    for (auto& r : res.records)
        std::sort(r.evidences.begin(), r.evidences.end(), evidence_before);
    std::sort(res.orphans.begin(), res.orphans.end(), evidence_before);
    std::sort(res.records.begin(), res.records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.prediction.contig_id, a.prediction.start, a.prediction.gene_id) <
               std::tie(b.prediction.contig_id, b.prediction.start, b.prediction.gene_id);
    });
    return res;
}

void write_gene_predictions(std::ostream& out, std::span<const GenePrediction> predictions)
{
    out << "#gene_id\tcontig_id\tstart\tend\tstrand\n";
    for (const auto& g : predictions)
        out << g.gene_id << '\t' << g.contig_id << '\t' << g.start << '\t' << g.end << '\t'
            << g.strand << '\n';
}

void write_evidence_table(std::ostream& out, std::span<const Evidence> evidence)
{
    out << "#gene_id\tsubject_id\tscore\tevalue\tdescription\n";
    for (const auto& e : evidence)
        out << e.gene_id << '\t' << e.subject_id << '\t' << text::format_double(e.score) << '\t'
            << text::format_double(e.evalue) << '\t' << e.description << '\n';
}

void export_tsv(std::span<const AnnotationRecord> records, std::ostream& out)
{
    out << "#gene_id\tcontig_id\tstart\tend\tstrand\tn_evidence\tbest_tool\tbest_subject\t"
           "best_evalue\tdescriptions\n";
    for (const auto& r : records) {
        const auto& p = r.prediction;
        out << p.gene_id << '\t' << p.contig_id << '\t' << p.start << '\t' << p.end << '\t'
            << p.strand << '\t' << r.evidences.size() << '\t';
        if (r.evidences.empty()) {
            out << "\t\t\t";
        } else {
            const auto& best = r.evidences.front();
            out << best.tool << '\t' << best.subject_id << '\t' << text::format_double(best.evalue)
                << '\t';
            for (std::size_t i = 0; i < r.evidences.size(); ++i)
                out << (i ? ";" : "") << r.evidences[i].description;
        }
        out << '\n';
    }
}

void export_metarep_jsonl(std::span<const AnnotationRecord> records, const std::string& library_id,
                          std::ostream& out)
{
    for (const auto& r : records) {
        ordered_json j;
        j["id"] = r.prediction.gene_id;
        j["library"] = library_id;
        std::string common = "unknown";
        if (!r.evidences.empty() && !r.evidences.front().description.empty())
            common = r.evidences.front().description;
        j["common_name"] = common;
        j["hit_ids"] = ordered_json::array();
        j["evalues"] = ordered_json::array();
        j["tools"] = ordered_json::array();
        for (const auto& e : r.evidences) {
            j["hit_ids"].push_back(e.subject_id);
            j["evalues"].push_back(e.evalue);
            j["tools"].push_back(e.tool);
        }
        out << j.dump() << '\n';
    }
}

namespace {

ordered_json evidence_json(const Evidence& e)
{
    return {{"gene_id", e.gene_id}, {"tool", e.tool},     {"subject_id", e.subject_id},
            {"score", e.score},     {"evalue", e.evalue}, {"description", e.description}};
}

Evidence evidence_from(const ordered_json& j)
{
    return {j.at("gene_id").get<std::string>(), j.at("tool").get<std::string>(),
            j.at("subject_id").get<std::string>(), j.at("score").get<double>(),
            j.at("evalue").get<double>(), j.at("description").get<std::string>()};
}

}  // namespace

std::string merged_to_json(const MergeResult& merged)
{
    ordered_json doc;
    doc["records"] = ordered_json::array();
    for (const auto& r : merged.records) {
        const auto& p = r.prediction;
        ordered_json j{{"gene_id", p.gene_id}, {"contig_id", p.contig_id}, {"start", p.start},
                       {"end", p.end},         {"strand", std::string(1, p.strand)}};
        j["evidences"] = ordered_json::array();
        for (const auto& e : r.evidences)
            j["evidences"].push_back(evidence_json(e));
        doc["records"].push_back(std::move(j));
    }
    doc["orphans"] = ordered_json::array();
    for (const auto& e : merged.orphans)
        doc["orphans"].push_back(evidence_json(e));
    return doc.dump(1) + "\n";
}

MergeResult merged_from_json(std::string_view text)
{
    MergeResult res;
    try {
        auto doc = ordered_json::parse(text);
        for (const auto& j : doc.at("records")) {
            AnnotationRecord r;
            r.prediction = {j.at("gene_id").get<std::string>(), j.at("contig_id").get<std::string>(),
                            j.at("start").get<long>(), j.at("end").get<long>(),
                            j.at("strand").get<std::string>().at(0)};
            for (const auto& e : j.at("evidences"))
                r.evidences.push_back(evidence_from(e));
            res.records.push_back(std::move(r));
        }
        for (const auto& e : doc.at("orphans"))
            res.orphans.push_back(evidence_from(e));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed merged annotation document: ") + e.what());
    }
    return res;
}

}  // namespace mpipe::annotation
