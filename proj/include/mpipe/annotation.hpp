#pragma once

#include "mpipe/text.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mpipe::annotation {

struct GenePrediction {
    std::string gene_id;
    std::string contig_id;
    long start = 1;  // 1-based, inclusive
    long end = 1;    // inclusive, end >= start
    char strand = '+';

    bool operator==(const GenePrediction&) const = default;
};

struct Evidence {
    std::string gene_id;
    std::string tool;
    std::string subject_id;
    double score = 0.0;
    double evalue = 0.0;
    std::string description;

    bool operator==(const Evidence&) const = default;
};

/// Canonical evidence order: evalue asc, score desc, tool, subject, description.
bool evidence_before(const Evidence& a, const Evidence& b);

struct AnnotationRecord {
    GenePrediction prediction;
    std::vector<Evidence> evidences;

    bool operator==(const AnnotationRecord&) const = default;
};

struct MergeResult {
    std::vector<AnnotationRecord> records;  // ordered by (contig_id, start, gene_id)
    std::vector<Evidence> orphans;          // evidence naming no known gene, canonical order
};

std::vector<GenePrediction> parse_gene_predictions(std::istream& in);

/// Stamps `tool` onto every row. Rows for unknown genes are kept.
std::vector<Evidence> parse_evidence_table(std::istream& in, const std::string& tool);

/// Conjoins predictions with all evidence. `predictions` may be the
/// concatenation of several scatter parts; a repeated gene id is an error.
MergeResult merge_annotations(std::span<const GenePrediction> predictions,
                              std::span<const std::vector<Evidence>> evidence_sets);

void write_gene_predictions(std::ostream& out, std::span<const GenePrediction> predictions);
void write_evidence_table(std::ostream& out, std::span<const Evidence> evidence);

/// Header plus one row per record; byte-deterministic.
void export_tsv(std::span<const AnnotationRecord> records, std::ostream& out);

/// One JSON document per line (Metarep-style stand-in schema).
void export_metarep_jsonl(std::span<const AnnotationRecord> records, const std::string& library_id,
                          std::ostream& out);

/// Intermediate merged file between `annotate` and `export`.
std::string merged_to_json(const MergeResult& merged);
MergeResult merged_from_json(std::string_view doc);

}  // namespace mpipe::annotation
