#include "mpipe/seqdata.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

namespace mpipe::seq {

namespace {

bool valid_base(char c)
{
    switch (c) {
    case 'A': case 'C': case 'G': case 'T': case 'N':
    case 'a': case 'c': case 'g': case 't': case 'n':
        return true;
    default:
        return false;
    }
}

void check_bases(std::string_view bases, std::size_t line)
{
    for (char c : bases) {
        if (!valid_base(c))
            throw ParseError(line, std::string("invalid base '") + c + "'");
    }
}

// Splits a header (without its marker) into id and description.
void split_header(std::string_view header, SequenceRecord& rec, std::size_t line)
{
    auto end = header.find_first_of(" \t");
    rec.id = std::string(header.substr(0, end));
    if (rec.id.empty())
        throw ParseError(line, "empty record id");
    if (end != std::string_view::npos) {
        auto rest = header.substr(end);
        auto b = rest.find_first_not_of(" \t");
        rec.description = b == std::string_view::npos ? std::string() : std::string(rest.substr(b));
    }
}

}  // namespace

std::optional<Format> format_for_path(const std::filesystem::path& p)
{
    auto ext = p.extension().string();
    if (ext == ".fa" || ext == ".fasta" || ext == ".fna")
        return Format::Fasta;
    if (ext == ".fq" || ext == ".fastq")
        return Format::Fastq;
    return std::nullopt;
}

std::string_view extension_for(Format f)
{
    return f == Format::Fastq ? ".fq" : ".fa";
}

SequenceReader::SequenceReader(std::istream& in, Format format, bool check_duplicates)
    : in_(in), format_(format), check_duplicates_(check_duplicates)
{
}

bool SequenceReader::getline(std::string& out)
{
    if (!std::getline(in_, out))
        return false;
    ++line_;
    if (!out.empty() && out.back() == '\r')
        out.pop_back();
    return true;
}

void SequenceReader::accept_id(const SequenceRecord& rec, std::size_t header_line)
{
    if (check_duplicates_ && !seen_.insert(rec.id).second)
        throw ParseError(header_line, "duplicate id '" + rec.id + "'");
}

std::optional<SequenceRecord> SequenceReader::next()
{
    return format_ == Format::Fasta ? next_fasta() : next_fastq();
}

std::optional<SequenceRecord> SequenceReader::next_fasta()
{
    std::string line;
    if (!pending_header_) {
        while (getline(line)) {
            if (line.empty())
                continue;
            if (line.front() != '>')
                throw ParseError(line_, "expected '>' header");
            pending_header_ = line.substr(1);
            pending_line_ = line_;
            break;
        }
        if (!pending_header_)
            return std::nullopt;
    }

    SequenceRecord rec;
    split_header(*pending_header_, rec, pending_line_);
    accept_id(rec, pending_line_);
    pending_header_.reset();
    while (getline(line)) {
        if (!line.empty() && line.front() == '>') {
            pending_header_ = line.substr(1);
            pending_line_ = line_;
            break;
        }
        check_bases(line, line_);
        rec.bases += line;
    }
    return rec;
}

std::optional<SequenceRecord> SequenceReader::next_fastq()
{
    std::string line;
    do {
        if (!getline(line))
            return std::nullopt;
    } while (line.empty());

    if (line.front() != '@')
        throw ParseError(line_, "expected '@' header");
    std::size_t header_line = line_;
    SequenceRecord rec;
    split_header(std::string_view(line).substr(1), rec, header_line);

    if (!getline(rec.bases))
        throw ParseError(line_ + 1, "truncated FASTQ record '" + rec.id + "': missing bases");
    check_bases(rec.bases, line_);
    if (!getline(line))
        throw ParseError(line_ + 1, "truncated FASTQ record '" + rec.id + "': missing '+' separator");
    if (line.empty() || line.front() != '+')
        throw ParseError(line_, "expected '+' separator in FASTQ record '" + rec.id + "'");
    std::string qual;
    if (!getline(qual))
        throw ParseError(line_ + 1, "truncated FASTQ record '" + rec.id + "': missing quality");
    if (qual.size() != rec.bases.size())
        throw ParseError(line_, "quality length " + std::to_string(qual.size()) +
                                    " does not match base length " +
                                    std::to_string(rec.bases.size()));
    std::vector<std::uint8_t> q;
    q.reserve(qual.size());
    for (char c : qual) {
        int v = static_cast<unsigned char>(c) - 33;
        if (v < 0 || v > 93)
            throw ParseError(line_, std::string("quality character '") + c + "' out of range");
        q.push_back(static_cast<std::uint8_t>(v));
    }
    rec.quality = std::move(q);
    accept_id(rec, header_line);
    return rec;
}

std::vector<SequenceRecord> parse_sequences(std::istream& in, Format format)
{
    SequenceReader reader(in, format);
    std::vector<SequenceRecord> out;
    while (auto rec = reader.next())
        out.push_back(std::move(*rec));
    return out;
}

std::vector<SequenceRecord> read_sequence_file(const std::filesystem::path& p)
{
    auto fmt = format_for_path(p);
    if (!fmt)
        throw Error("cannot infer sequence format from '" + p.string() + "'");
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + p.string() + "'");
    try {
        return parse_sequences(in, *fmt);
    } catch (const ParseError& e) {
        throw ParseError(e.line(), p.string() + ": " + e.what());
    }
}

void write_sequences(std::ostream& out, std::span<const SequenceRecord> records, Format format)
{
    for (const auto& r : records) {
        if (format == Format::Fastq && !r.quality)
            throw Error("record '" + r.id + "' has no quality; cannot write FASTQ");
    }
    std::string buf;
    for (const auto& r : records) {
        buf.clear();
        buf += format == Format::Fasta ? '>' : '@';
        buf += r.id;
        if (!r.description.empty()) {
            buf += ' ';
            buf += r.description;
        }
        buf += '\n';
        buf += r.bases;
        buf += '\n';
        if (format == Format::Fastq) {
            buf += "+\n";
            for (auto q : *r.quality)
                buf += static_cast<char>(q + 33);
            buf += '\n';
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
}

void write_sequence_file(const std::filesystem::path& p, std::span<const SequenceRecord> records)
{
    auto fmt = format_for_path(p);
    if (!fmt)
        throw Error("cannot infer sequence format from '" + p.string() + "'");
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write '" + p.string() + "'");
    write_sequences(out, records, *fmt);
    if (!out.flush())
        throw Error("write failed for '" + p.string() + "'");
}

Format natural_format(std::span<const SequenceRecord> records)
{
    bool all = std::all_of(records.begin(), records.end(),
                           [](const SequenceRecord& r) { return r.quality.has_value(); });
    return all && !records.empty() ? Format::Fastq : Format::Fasta;
}

void FilterParams::validate() const
{
    if (!(min_mean_quality >= 0.0 && min_mean_quality <= 93.0))
        throw Error("min_mean_quality must be in [0, 93]");
    if (!(max_n_fraction >= 0.0 && max_n_fraction <= 1.0))
        throw Error("max_n_fraction must be in [0, 1]");
}

double n_fraction(const SequenceRecord& r)
{
    if (r.bases.empty())
        return 0.0;
    auto n = std::count_if(r.bases.begin(), r.bases.end(), [](char c) { return c == 'N' || c == 'n'; });
    return static_cast<double>(n) / static_cast<double>(r.bases.size());
}

std::optional<double> mean_quality(const SequenceRecord& r)
{
    if (!r.quality)
        return std::nullopt;
    if (r.quality->empty())
        return 0.0;
    std::uint64_t sum = 0;
    for (auto q : *r.quality)
        sum += q;
    return static_cast<double>(sum) / static_cast<double>(r.quality->size());
}

std::optional<Rejection> rejection_reason(const SequenceRecord& r, const FilterParams& p)
{
    if (r.bases.size() < p.min_length)
        return Rejection::Length;
    if (n_fraction(r) > p.max_n_fraction)
        return Rejection::NFraction;
    if (auto mq = mean_quality(r); mq && *mq < p.min_mean_quality)
        return Rejection::MeanQuality;
    return std::nullopt;
}

FilterResult quality_filter(std::span<const SequenceRecord> records, const FilterParams& params)
{
    params.validate();
    FilterResult res;
    for (const auto& r : records) {
        auto why = rejection_reason(r, params);
        if (!why) {
            res.kept.push_back(r);
            continue;
        }
        switch (*why) {
        case Rejection::Length: ++res.report.rejected_length; break;
        case Rejection::NFraction: ++res.report.rejected_n_fraction; break;
        case Rejection::MeanQuality: ++res.report.rejected_mean_quality; break;
        }
    }
    res.report.kept = res.kept.size();
    return res;
}

std::vector<SequenceRecord> length_cutoff_filter(std::span<const SequenceRecord> contigs,
                                                 std::size_t min_length)
{
    std::vector<SequenceRecord> out;
    std::copy_if(contigs.begin(), contigs.end(), std::back_inserter(out),
                 [&](const SequenceRecord& r) { return r.bases.size() >= min_length; });
    return out;
}

MaskResult mask_records(std::span<const SequenceRecord> records,
                        const std::set<std::string>& exclude_ids)
{
    MaskResult res;
    std::set<std::string> hit;
    for (const auto& r : records) {
        if (exclude_ids.count(r.id))
            hit.insert(r.id);
        else
            res.records.push_back(r);
    }
    std::set_difference(exclude_ids.begin(), exclude_ids.end(), hit.begin(), hit.end(),
                        std::back_inserter(res.absent_ids));
    return res;
}

std::vector<Partition> split_records(std::span<const SequenceRecord> records, std::size_t n_parts)
{
    if (n_parts == 0)
        throw Error("n_parts must be >= 1");
    std::vector<Partition> parts(n_parts);
    for (std::size_t i = 0; i < n_parts; ++i) {
        parts[i].index = i;
        parts[i].n_parts = n_parts;
        parts[i].records.reserve(records.size() / n_parts + 1);
    }
    for (std::size_t j = 0; j < records.size(); ++j)
        parts[j % n_parts].records.push_back(records[j]);
    return parts;
}

std::vector<SequenceRecord> merge_parts(std::vector<Partition> partitions)
{
    if (partitions.empty())
        throw Error("no partitions to merge");
    const std::size_t n = partitions.front().n_parts;
    if (n == 0)
        throw Error("partition declares n_parts = 0");
    std::vector<Partition*> by_index(n, nullptr);
    std::size_t total = 0;
    for (auto& p : partitions) {
        if (p.n_parts != n)
            throw Error("partitions disagree on n_parts (" + std::to_string(p.n_parts) + " vs " +
                        std::to_string(n) + ")");
        if (p.index >= n)
            throw Error("partition index " + std::to_string(p.index) + " out of range");
        if (by_index[p.index])
            throw Error("duplicate partition index " + std::to_string(p.index));
        by_index[p.index] = &p;
        total += p.records.size();
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!by_index[i])
            throw Error("missing partition index " + std::to_string(i));
        std::size_t expected = total > i ? (total - i + n - 1) / n : 0;
        if (by_index[i]->records.size() != expected)
            throw Error("partition " + std::to_string(i) + " holds " +
                        std::to_string(by_index[i]->records.size()) + " records, expected " +
                        std::to_string(expected) + " for round-robin order");
    }

    std::vector<SequenceRecord> out;
    out.reserve(total);
    for (std::size_t j = 0; j < total; ++j)
        out.push_back(std::move(by_index[j % n]->records[j / n]));
    return out;
}

}  // namespace mpipe::seq
