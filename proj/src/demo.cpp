#include "mpipe/demo.hpp"

#include "mpipe/text.hpp"

#include <json.hpp>

#include <fstream>
#include <random>

namespace mpipe::demo {

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL)
{
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// splitmix64 finalizer; spreads the low bits of an FNV hash.
std::uint64_t mix(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

char complement(char b)
{
    switch (b) {
    case 'A': return 'T';
    case 'T': return 'A';
    case 'C': return 'G';
    case 'G': return 'C';
    default: return 'N';
    }
}

bool is_stop(std::string_view codon)
{
    return codon == "TAA" || codon == "TAG" || codon == "TGA";
}

}  // namespace

std::vector<seq::SequenceRecord> synthetic_reads(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    static constexpr char kBases[] = {'A', 'C', 'G', 'T'};
    std::vector<seq::SequenceRecord> reads;
    reads.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        seq::SequenceRecord r;
        char id[32];
        std::snprintf(id, sizeof id, "read_%05zu", i + 1);
        r.id = id;
        r.description = "sample=demo";
        const std::size_t len = 80 + rng() % 321;
        const bool low = rng() % 10 == 0;
        r.bases.resize(len);
        std::vector<std::uint8_t> q(len);
        for (std::size_t k = 0; k < len; ++k) {
            r.bases[k] = rng() % 100 == 0 ? 'N' : kBases[rng() % 4];
            q[k] = static_cast<std::uint8_t>(low ? 5 + rng() % 11 : 25 + rng() % 16);
        }
        r.quality = std::move(q);
        reads.push_back(std::move(r));
    }
    return reads;
}

std::vector<taxonomy::TaxonEdge> synthetic_taxonomy()
{
    std::vector<taxonomy::TaxonEdge> edges{{"root", "", "root", "no rank"}};
    for (int p = 1; p <= 3; ++p) {
        const std::string pid = "p" + std::to_string(p);
        edges.push_back({pid, "root", "Phylum " + std::to_string(p), "phylum"});
        for (int c = 1; c <= 2; ++c) {
            const std::string cid = pid + "c" + std::to_string(c);
            edges.push_back({cid, pid, "Class " + cid, "class"});
            for (int g = 1; g <= 2; ++g) {
                const std::string gid = cid + "g" + std::to_string(g);
                edges.push_back({gid, cid, "Genus " + gid, "genus"});
                for (int s = 1; s <= 2; ++s) {
                    const std::string sid = gid + "s" + std::to_string(s);
                    edges.push_back({sid, gid, "Species " + sid, "species"});
                }
            }
        }
    }
    return edges;
}

taxonomy::HitTable synthetic_rrna_hits(std::span<const seq::SequenceRecord> reads,
                                       const taxonomy::TaxonomyTree& tree)
{
    std::vector<std::string> species;
    for (std::size_t i = 0; i < tree.size(); ++i)
        if (tree.node(i).rank == "species")
            species.push_back(tree.node(i).id);
    taxonomy::HitTable hits;
    if (species.empty())
        return hits;
    for (const auto& r : reads) {
        std::uint64_t h = mix(fnv1a(r.bases, fnv1a(r.id)));
        if (h % 8 != 0)
            continue;
        h >>= 3;
        std::size_t s = h % species.size();
        auto& list = hits[r.id];
        list.push_back(species[s]);
        // A second hit on the sibling (genus-level LCA) or further away.
        switch ((h >> 8) % 4) {
        case 0: list.push_back(species[s ^ 1]); break;
        case 1: list.push_back(species[(s + 4) % species.size()]); break;
        default: break;
        }
    }
    return hits;
}

void write_hits_tsv(std::ostream& out, const taxonomy::HitTable& hits)
{
    out << "#read_id\ttaxon_id\n";
    for (const auto& [read, taxa] : hits)
        for (const auto& t : taxa)
            out << read << '\t' << t << '\n';
}

std::vector<annotation::GenePrediction> predict_genes(std::span<const seq::SequenceRecord> contigs,
                                                      std::size_t min_nt)
{
    std::vector<annotation::GenePrediction> genes;
    for (const auto& c : contigs) {
        std::string fwd;
        fwd.reserve(c.bases.size());
        for (char b : c.bases)
            fwd.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(b))));
        std::string rev(fwd.rbegin(), fwd.rend());
        for (char& b : rev)
            b = complement(b);
        const long len = static_cast<long>(fwd.size());

        for (char strand : {'+', '-'}) {
            const std::string& s = strand == '+' ? fwd : rev;
            for (long frame = 0; frame < 3; ++frame) {
                long open = -1;
                for (long i = frame; i + 3 <= len; i += 3) {
                    std::string_view codon(s.data() + i, 3);
                    if (open < 0 && codon == "ATG") {
                        open = i;
                    } else if (open >= 0 && is_stop(codon)) {
                        const long stop_end = i + 3;
                        if (static_cast<std::size_t>(stop_end - open) >= min_nt) {
                            annotation::GenePrediction g;
                            g.contig_id = c.id;
                            g.strand = strand;
                            g.start = strand == '+' ? open + 1 : len - stop_end + 1;
                            g.end = strand == '+' ? stop_end : len - open;
                            g.gene_id = c.id + "_" + std::to_string(g.start) + "_" + std::to_string(g.end) +
                                        (strand == '+' ? "_p" : "_m");
                            genes.push_back(std::move(g));
                        }
                        open = -1;
                    }
                }
            }
        }
    }
    return genes;
}

std::vector<annotation::Evidence> synthetic_search(std::span<const annotation::GenePrediction> genes,
                                                   const std::string& tool)
{
    const bool priam = tool == "priam";
    if (!priam && tool != "blastp")
        throw Error("unknown search tool '" + tool + "'");
    static const char* kProducts[] = {"DNA polymerase III subunit beta", "ABC transporter permease",
                                      "elongation factor Tu",            "glutamine synthetase",
                                      "30S ribosomal protein S12",       "hypothetical protein",
                                      "alcohol dehydrogenase",           "chaperonin GroEL"};
    static const char* kEnzymes[] = {"2.7.7.7", "1.1.1.1", "6.3.1.2", "3.6.3.-", "5.99.1.2"};
    std::vector<annotation::Evidence> out;
    for (const auto& g : genes) {
        std::uint64_t h = mix(fnv1a(tool, fnv1a(g.gene_id)));
        const unsigned hit_pct = priam ? 40 : 70;
        if (h % 100 >= hit_pct)
            continue;
        const std::size_t n_hits = 1 + (h >> 8) % 3;
        for (std::size_t k = 0; k < n_hits; ++k) {
            std::uint64_t hk = mix(h + k);
            annotation::Evidence e;
            e.gene_id = g.gene_id;
            e.tool = tool;
            // e-values are exact decimal literals so they survive text round trips.
            text::parse_double("1e-" + std::to_string(1 + hk % 60), e.evalue);
            e.score = static_cast<double>(200 + (hk >> 16) % 8000) / 10.0;
            if (priam) {
                const char* ec = kEnzymes[(hk >> 24) % std::size(kEnzymes)];
                e.subject_id = std::string("EC:") + ec;
                e.description = std::string("EC ") + ec;
            } else {
                char sid[32];
                std::snprintf(sid, sizeof sid, "UniRef50_P%05llu",
                              static_cast<unsigned long long>((hk >> 20) % 100000));
                e.subject_id = sid;
                e.description = kProducts[(hk >> 40) % std::size(kProducts)];
            }
            out.push_back(std::move(e));
        }
    }
    return out;
}

std::string demo_pipeline_config(const std::filesystem::path& taxonomy_tsv,
                                 const std::filesystem::path& mpipe_bin)
{
    const std::string bin = text::shell_quote(std::filesystem::absolute(mpipe_bin).string());
    const std::string tax = text::shell_quote(std::filesystem::absolute(taxonomy_tsv).string());
    nlohmann::ordered_json j;
    j["name"] = "demo";
    j["workdir_root"] = "runs";
    auto stage = [](std::string id, std::string input, std::string command, std::vector<std::string> outputs,
                    double base) {
        return nlohmann::ordered_json{{"id", id},         {"mode", "scatter"}, {"input", input},
                                      {"command", command}, {"outputs", outputs}, {"cores", 1},
                                      {"base_time_s", base}, {"logs", "{workdir}/*.log"}};
    };
    j["stages"] = nlohmann::ordered_json::array();
    j["stages"].push_back(stage("filter", "dataset",
                                bin + " filter --input {input} --output {workdir}/filtered.fq --part {part}"
                                      " --min-length 100 --min-mean-quality 20 --max-n-fraction 0.05",
                                {"{workdir}/filtered.fq"}, 2.0));
    j["stages"].push_back(stage("classify", "filter",
                                bin + " tool rrna-search --input {input} --taxonomy " + tax +
                                    " --output {workdir}/hits.tsv --part {part} && " + bin +
                                    " classify --hits {workdir}/hits.tsv --taxonomy " + tax +
                                    " --reads {input} --output {workdir}/assignments.tsv && " + bin +
                                    " filter --input {input} --exclude-ids {workdir}/hits.tsv"
                                    " --output {workdir}/masked.fq",
                                {"{workdir}/masked.fq", "{workdir}/assignments.tsv"}, 4.0));
    j["stages"].push_back(stage("annotate", "classify",
                                bin + " tool predict-genes --input {input} --output {workdir}/predictions.tsv"
                                      " --part {part} && " +
                                    bin + " tool search --tool blastp --predictions {workdir}/predictions.tsv"
                                          " --output {workdir}/blastp.tsv && " +
                                    bin + " tool search --tool priam --predictions {workdir}/predictions.tsv"
                                          " --output {workdir}/priam.tsv",
                                {"{workdir}/predictions.tsv", "{workdir}/blastp.tsv", "{workdir}/priam.tsv"},
                                10.0));
    return "// Demo metagenomics pipeline: quality filter, rRNA classification, annotation.\n" +
           j.dump(2) + "\n";
}

DemoBundle write_demo_bundle(const std::filesystem::path& dir, std::size_t n_reads, std::uint64_t seed,
                             const std::filesystem::path& mpipe_bin)
{
    std::filesystem::create_directories(dir);
    DemoBundle b{std::filesystem::absolute(dir / "reads.fq"), std::filesystem::absolute(dir / "taxonomy.tsv"),
                 std::filesystem::absolute(dir / "demo_pipeline.cfg")};
    seq::write_sequence_file(b.reads, synthetic_reads(n_reads, seed));
    {
        std::ofstream out(b.taxonomy);
        out << "#taxon_id\tparent_id\tname\trank\n";
        for (const auto& e : synthetic_taxonomy())
            out << e.child << '\t' << e.parent << '\t' << e.name << '\t' << e.rank << '\n';
        if (!out)
            throw Error("cannot write '" + b.taxonomy.string() + "'");
    }
    std::ofstream cfg(b.pipeline);
    cfg << demo_pipeline_config(b.taxonomy, mpipe_bin);
    if (!cfg)
        throw Error("cannot write '" + b.pipeline.string() + "'");
    return b;
}

}  // namespace mpipe::demo
