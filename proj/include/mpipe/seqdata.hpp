#pragma once

#include "mpipe/text.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace mpipe::seq {

enum class Format { Fasta, Fastq };

/// Format implied by a file extension, if any.
std::optional<Format> format_for_path(const std::filesystem::path& p);
std::string_view extension_for(Format f);

struct SequenceRecord {
    std::string id;
    std::string description;
    std::string bases;
    std::optional<std::vector<std::uint8_t>> quality;  // Phred scores 0..93

    bool operator==(const SequenceRecord&) const = default;
};

/// Single-pass reader. Memory is constant in the record count unless duplicate
/// checking is on, which keeps the set of ids seen.
class SequenceReader {
public:
    SequenceReader(std::istream& in, Format format, bool check_duplicates = true);

    std::optional<SequenceRecord> next();

    std::size_t line() const noexcept { return line_; }

private:
    bool getline(std::string& out);
    std::optional<SequenceRecord> next_fasta();
    std::optional<SequenceRecord> next_fastq();
    void accept_id(const SequenceRecord& rec, std::size_t header_line);

    std::istream& in_;
    Format format_;
    bool check_duplicates_;
    std::unordered_set<std::string> seen_;
    std::size_t line_ = 0;
    std::optional<std::string> pending_header_;
    std::size_t pending_line_ = 0;
};

std::vector<SequenceRecord> parse_sequences(std::istream& in, Format format);

/// Reads a whole file, format taken from its extension.
std::vector<SequenceRecord> read_sequence_file(const std::filesystem::path& p);

/// Canonical form: one base line per record, LF endings. Throws when FASTQ is
/// requested for a record without quality.
void write_sequences(std::ostream& out, std::span<const SequenceRecord> records, Format format);

void write_sequence_file(const std::filesystem::path& p, std::span<const SequenceRecord> records);

/// FASTQ when every record carries quality, FASTA otherwise.
Format natural_format(std::span<const SequenceRecord> records);

struct FilterParams {
    std::size_t min_length = 0;
    double min_mean_quality = 0.0;
    double max_n_fraction = 1.0;

    /// Throws Error when a bound is outside its range.
    void validate() const;
};

enum class Rejection { Length, NFraction, MeanQuality };

struct FilterReport {
    std::size_t kept = 0;
    std::size_t rejected_length = 0;
    std::size_t rejected_n_fraction = 0;
    std::size_t rejected_mean_quality = 0;

    std::size_t rejected() const { return rejected_length + rejected_n_fraction + rejected_mean_quality; }
    bool operator==(const FilterReport&) const = default;
};

struct FilterResult {
    std::vector<SequenceRecord> kept;
    FilterReport report;
};

double n_fraction(const SequenceRecord& r);
/// Mean Phred score; nullopt when the record has no quality.
std::optional<double> mean_quality(const SequenceRecord& r);

/// First failing criterion, checked in order length, N-fraction, mean quality.
std::optional<Rejection> rejection_reason(const SequenceRecord& r, const FilterParams& p);

FilterResult quality_filter(std::span<const SequenceRecord> records, const FilterParams& params);

/// Keeps records with length >= min_length.
std::vector<SequenceRecord> length_cutoff_filter(std::span<const SequenceRecord> contigs,
                                                 std::size_t min_length);

struct MaskResult {
    std::vector<SequenceRecord> records;
    std::vector<std::string> absent_ids;  // excluded ids never seen in the input, sorted
};

MaskResult mask_records(std::span<const SequenceRecord> records,
                        const std::set<std::string>& exclude_ids);

struct Partition {
    std::size_t index = 0;
    std::size_t n_parts = 1;
    std::vector<SequenceRecord> records;

    bool operator==(const Partition&) const = default;
};

/// Round-robin by record count: record j lands in partition j mod n_parts.
std::vector<Partition> split_records(std::span<const SequenceRecord> records, std::size_t n_parts);

/// Inverse of split_records. Partitions may be given in any order.
std::vector<SequenceRecord> merge_parts(std::vector<Partition> partitions);

}  // namespace mpipe::seq
