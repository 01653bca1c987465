#pragma once

#include "mpipe/text.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mpipe::taxonomy {

struct TaxonEdge {
    std::string child;
    std::string parent;  // empty for the root row
    std::string name;
    std::string rank;
};

class TaxonomyError : public Error {
public:
    enum class Kind { Empty, Cycle, Orphan, MultipleRoots, DuplicateId, UnknownId };

    TaxonomyError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct TaxonNode {
    std::string id;
    std::string name;
    std::string rank;
    std::optional<std::size_t> parent;
    std::size_t depth = 0;
    std::vector<std::size_t> children;  // sorted by id
};

/// Rooted tree, immutable once built. Node 0 is always the root.
class TaxonomyTree {
public:
    const TaxonNode& root() const { return nodes_.front(); }
    std::size_t size() const { return nodes_.size(); }
    const TaxonNode& node(std::size_t index) const { return nodes_.at(index); }
    std::optional<std::size_t> find(std::string_view id) const;
    /// Index of `id`; throws TaxonomyError(UnknownId).
    std::size_t index_of(std::string_view id) const;
    std::size_t depth(std::string_view id) const { return nodes_[index_of(id)].depth; }

    std::size_t lca(std::size_t a, std::size_t b) const;

    /// Node ids from `id` up to and including the root.
    std::vector<std::string> path_to_root(std::string_view id) const;

    friend TaxonomyTree build_taxonomy(std::span<const TaxonEdge> edges);

private:
    std::vector<TaxonNode> nodes_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Validates and builds the tree. A parent id that is never declared as a child
/// becomes the root when no row has an empty parent and it is the only such id.
TaxonomyTree build_taxonomy(std::span<const TaxonEdge> edges);

/// Deepest node that is an ancestor-or-self of every member of `taxa`.
std::string lca(const TaxonomyTree& tree, std::span<const std::string> taxa);

inline constexpr std::string_view kUnclassified = "UNCLASSIFIED";

struct TaxAssignment {
    std::string read_id;
    std::optional<std::string> taxon;  // nullopt = UNCLASSIFIED
    std::size_t n_hits = 0;

    bool operator==(const TaxAssignment&) const = default;
};

using HitTable = std::map<std::string, std::vector<std::string>>;

/// Reads with at least `min_hits` hits get the LCA of their hits; output is
/// sorted by read id.
std::vector<TaxAssignment> classify_reads(const HitTable& hits, const TaxonomyTree& tree,
                                          std::size_t min_hits = 1);

struct NodeCounts {
    std::size_t direct = 0;
    std::size_t cumulative = 0;

    bool operator==(const NodeCounts&) const = default;
};

struct HierarchyCounts {
    std::vector<NodeCounts> per_node;  // indexed like the tree
    std::size_t unclassified = 0;
};

HierarchyCounts hierarchy_counts(std::span<const TaxAssignment> assignments,
                                 const TaxonomyTree& tree);

// TSV surfaces

std::vector<TaxonEdge> parse_taxonomy_tsv(std::istream& in);
/// `read_id<TAB>taxon_id` rows; repeated reads accumulate hits.
HitTable parse_hits_tsv(std::istream& in);
void add_reads_without_hits(HitTable& hits, std::span<const std::string> read_ids);

void write_assignments_tsv(std::ostream& out, std::span<const TaxAssignment> assignments);
std::vector<TaxAssignment> parse_assignments_tsv(std::istream& in);

/// `name<TAB>direct<TAB>cumulative`, two spaces of indent per depth, children
/// ordered by id, UNCLASSIFIED last.
void write_hierarchy_text(std::ostream& out, const TaxonomyTree& tree, const HierarchyCounts& counts);
std::string hierarchy_json(const TaxonomyTree& tree, const HierarchyCounts& counts);

}  // namespace mpipe::taxonomy
