#pragma once

#include "mpipe/annotation.hpp"
#include "mpipe/seqdata.hpp"
#include "mpipe/taxonomy.hpp"

#include <cstdint>
#include <filesystem>

// Deterministic stand-ins for the external tools a metagenomics pipeline
// would call, so the whole workflow runs without third-party binaries.
namespace mpipe::demo {

/// FASTQ reads, 80-400 bp, ids read_00001.. Roughly 1% N bases and one read
/// in ten with low quality.
std::vector<seq::SequenceRecord> synthetic_reads(std::size_t n, std::uint64_t seed);

/// Four-level tree: root, 3 phyla, 2 classes each, 2 genera each, 2 species each.
std::vector<taxonomy::TaxonEdge> synthetic_taxonomy();

/// rRNA "hits" for about one read in eight. Depends only on each read's own
/// id and bases, so any partitioning of the reads gives the same table.
taxonomy::HitTable synthetic_rrna_hits(std::span<const seq::SequenceRecord> reads,
                                       const taxonomy::TaxonomyTree& tree);

void write_hits_tsv(std::ostream& out, const taxonomy::HitTable& hits);

/// ATG..stop open reading frames of at least `min_nt` bases on both strands.
/// Coordinates are 1-based on the forward strand.
std::vector<annotation::GenePrediction> predict_genes(std::span<const seq::SequenceRecord> contigs,
                                                      std::size_t min_nt = 60);

/// Deterministic per-gene evidence for tool "blastp" or "priam".
std::vector<annotation::Evidence> synthetic_search(std::span<const annotation::GenePrediction> genes,
                                                   const std::string& tool);

struct DemoBundle {
    std::filesystem::path reads;
    std::filesystem::path taxonomy;
    std::filesystem::path pipeline;
};

/// Writes reads.fq, taxonomy.tsv and demo_pipeline.cfg into `dir`. The
/// pipeline has three scatter stages (filter, classify, annotate) whose
/// commands invoke `mpipe_bin`.
DemoBundle write_demo_bundle(const std::filesystem::path& dir, std::size_t n_reads, std::uint64_t seed,
                             const std::filesystem::path& mpipe_bin);

/// Text of the demo pipeline config.
std::string demo_pipeline_config(const std::filesystem::path& taxonomy_tsv,
                                 const std::filesystem::path& mpipe_bin);

}  // namespace mpipe::demo
