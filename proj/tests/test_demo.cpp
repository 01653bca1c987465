#include "mpipe/demo.hpp"
#include "mpipe/pipeline.hpp"

#include "support.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using namespace mpipe;

TEST_CASE("synthetic reads are deterministic and in range")
{
    auto a = demo::synthetic_reads(300, 7);
    CHECK(a == demo::synthetic_reads(300, 7));
    CHECK(a != demo::synthetic_reads(300, 8));
    std::size_t low = 0, n_bases = 0, ns = 0;
    for (const auto& r : a) {
        CHECK(r.bases.size() >= 80);
        CHECK(r.bases.size() <= 400);
        REQUIRE(r.quality);
        low += seq::mean_quality(r) < 20.0;
        n_bases += r.bases.size();
        ns += static_cast<std::size_t>(std::count(r.bases.begin(), r.bases.end(), 'N'));
    }
    CHECK(a.front().id == "read_00001");
    CHECK(low > 10);
    CHECK(low < 60);
    CHECK(ns > 0);
    CHECK(ns < n_bases / 50);
}

TEST_CASE("synthetic taxonomy shape")
{
    auto edges = demo::synthetic_taxonomy();
    CHECK(edges.size() == 46);
    auto tree = taxonomy::build_taxonomy(edges);
    CHECK(tree.depth("p3c2g2s2") == 4);
}

TEST_CASE("rRNA hits depend only on each read")
{
    auto reads = demo::synthetic_reads(400, 3);
    auto edges = demo::synthetic_taxonomy();
    auto tree = taxonomy::build_taxonomy(edges);
    auto all = demo::synthetic_rrna_hits(reads, tree);
    CHECK(all.size() > 20);
    CHECK(all.size() < 100);
    taxonomy::HitTable merged;
    for (const auto& p : seq::split_records(reads, 7))
        for (auto& [k, v] : demo::synthetic_rrna_hits(p.records, tree))
            merged[k] = v;
    CHECK(merged == all);
    std::stringstream tsv;
    demo::write_hits_tsv(tsv, all);
    CHECK(taxonomy::parse_hits_tsv(tsv) == all);
}

TEST_CASE("gene prediction finds ORFs on both strands")
{
    // ATG + 20 codons + TAA on the forward strand; its reverse complement on the second contig.
    std::string orf = "ATG" + std::string(60, 'C') + "TAA";
    std::string rc;
    for (auto it = orf.rbegin(); it != orf.rend(); ++it)
        rc.push_back(*it == 'A' ? 'T' : *it == 'T' ? 'A' : *it == 'C' ? 'G' : 'C');
    std::vector<seq::SequenceRecord> contigs{{"c1", "", "GG" + orf + "GG", {}}, {"c2", "", "T" + rc, {}}};
    auto genes = demo::predict_genes(contigs, 60);
    REQUIRE(genes.size() == 2);
    CHECK(genes[0].gene_id == "c1_3_68_p");
    CHECK(genes[0].start == 3);
    CHECK(genes[0].end == 68);
    CHECK(genes[1].strand == '-');
    CHECK(genes[1].start == 2);
    CHECK(genes[1].end == 67);
    CHECK(demo::predict_genes(contigs, 100).empty());
}

TEST_CASE("synthetic search is deterministic per gene")
{
    auto reads = demo::synthetic_reads(50, 1);
    auto genes = demo::predict_genes(reads);
    REQUIRE(genes.size() > 10);
    auto b = demo::synthetic_search(genes, "blastp");
    CHECK(b == demo::synthetic_search(genes, "blastp"));
    std::vector<annotation::GenePrediction> half(genes.begin(), genes.begin() + genes.size() / 2);
    auto hb = demo::synthetic_search(half, "blastp");
    CHECK(std::equal(hb.begin(), hb.end(), b.begin()));
    auto p = demo::synthetic_search(genes, "priam");
    CHECK(p.front().subject_id.rfind("EC:", 0) == 0);
    CHECK_THROWS_AS(demo::synthetic_search(genes, "hmmer"), Error);
}

TEST_CASE("demo bundle writes a valid pipeline")
{
    testing::TempDir dir("bundle");
    auto b = demo::write_demo_bundle(dir.path(), 30, 2, "/usr/bin/mpipe");
    CHECK(seq::read_sequence_file(b.reads).size() == 30);
    auto spec = pipeline::parse_pipeline_spec(testing::read_file(b.pipeline));
    REQUIRE(spec.stages.size() == 3);
    CHECK(spec.stages[2].input == "classify");
    CHECK(spec.stages[0].command_template.rfind("/usr/bin/mpipe filter", 0) == 0);
}
