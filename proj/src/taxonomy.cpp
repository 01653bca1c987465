#include "mpipe/taxonomy.hpp"

#include <json.hpp>

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>

namespace mpipe::taxonomy {

using Kind = TaxonomyError::Kind;

std::optional<std::size_t> TaxonomyTree::find(std::string_view id) const
{
    auto it = index_.find(std::string(id));
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

std::size_t TaxonomyTree::index_of(std::string_view id) const
{
    auto i = find(id);
    if (!i)
        throw TaxonomyError(Kind::UnknownId, "unknown taxon id '" + std::string(id) + "'");
    return *i;
}

std::size_t TaxonomyTree::lca(std::size_t a, std::size_t b) const
{
    while (nodes_[a].depth > nodes_[b].depth)
        a = *nodes_[a].parent;
    while (nodes_[b].depth > nodes_[a].depth)
        b = *nodes_[b].parent;
    while (a != b) {
        a = *nodes_[a].parent;
        b = *nodes_[b].parent;
    }
    return a;
}

std::vector<std::string> TaxonomyTree::path_to_root(std::string_view id) const
{
    std::vector<std::string> path;
    std::optional<std::size_t> cur = index_of(id);
    while (cur) {
        path.push_back(nodes_[*cur].id);
        cur = nodes_[*cur].parent;
    }
    return path;
}

TaxonomyTree build_taxonomy(std::span<const TaxonEdge> edges)
{
    if (edges.empty())
        throw TaxonomyError(Kind::Empty, "taxonomy edge list is empty");

    std::map<std::string, const TaxonEdge*> declared;
    for (const auto& e : edges) {
        if (e.child.empty())
            throw TaxonomyError(Kind::Orphan, "edge with empty child id");
        if (!declared.emplace(e.child, &e).second)
            throw TaxonomyError(Kind::DuplicateId, "duplicate taxon id '" + e.child + "'");
        if (e.parent == e.child)
            throw TaxonomyError(Kind::Cycle, "taxon '" + e.child + "' is its own parent");
    }

    std::vector<std::string> explicit_roots;
    std::set<std::string> undeclared;
    for (const auto& e : edges) {
        if (e.parent.empty())
            explicit_roots.push_back(e.child);
        else if (!declared.count(e.parent))
            undeclared.insert(e.parent);
    }
    if (explicit_roots.size() > 1)
        throw TaxonomyError(Kind::MultipleRoots, "multiple roots: '" + explicit_roots[0] +
                                                     "' and '" + explicit_roots[1] + "'");

    TaxonEdge implicit_root;
    std::string root_id;
    if (explicit_roots.size() == 1) {
        if (!undeclared.empty())
            throw TaxonomyError(Kind::Orphan, "parent id '" + *undeclared.begin() +
                                                  "' is never defined");
        root_id = explicit_roots.front();
    } else if (undeclared.size() == 1) {
        root_id = *undeclared.begin();
        implicit_root = {root_id, "", root_id, "no rank"};
    } else if (undeclared.size() > 1) {
        throw TaxonomyError(Kind::Orphan, "parent ids '" + *undeclared.begin() + "' and '" +
                                              *std::next(undeclared.begin()) +
                                              "' are never defined");
    } else {
        throw TaxonomyError(Kind::Cycle, "no root: parent links form a cycle");
    }

    TaxonomyTree tree;
    auto add = [&](const TaxonEdge& e) {
        tree.index_.emplace(e.child, tree.nodes_.size());
        tree.nodes_.push_back({e.child, e.name, e.rank, std::nullopt, 0, {}});
    };
    if (implicit_root.child.empty())
        add(*declared.at(root_id));
    else
        add(implicit_root);
    for (const auto& [id, e] : declared)
        if (id != root_id)
            add(*e);

    for (std::size_t i = 1; i < tree.nodes_.size(); ++i) {
        const auto& e = declared.at(tree.nodes_[i].id);
        std::size_t p = tree.index_.at(e->parent);
        tree.nodes_[i].parent = p;
        tree.nodes_[p].children.push_back(i);
    }

    // Depths by BFS from the root; anything unreached sits on a cycle.
    std::vector<bool> reached(tree.nodes_.size(), false);
    std::vector<std::size_t> frontier{0};
    reached[0] = true;
    while (!frontier.empty()) {
        std::size_t n = frontier.back();
        frontier.pop_back();
        auto& kids = tree.nodes_[n].children;
        std::sort(kids.begin(), kids.end(), [&](std::size_t a, std::size_t b) {
            return tree.nodes_[a].id < tree.nodes_[b].id;
        });
        for (auto c : kids) {
            tree.nodes_[c].depth = tree.nodes_[n].depth + 1;
            reached[c] = true;
            frontier.push_back(c);
        }
    }
    for (std::size_t i = 0; i < reached.size(); ++i) {
        if (!reached[i])
            throw TaxonomyError(Kind::Cycle,
                                "taxon '" + tree.nodes_[i].id + "' lies on a parent cycle");
    }
    return tree;
}

std::string lca(const TaxonomyTree& tree, std::span<const std::string> taxa)
{
    if (taxa.empty())
        throw TaxonomyError(Kind::Empty, "lca of an empty set");
    std::size_t acc = tree.index_of(taxa.front());
    for (std::size_t i = 1; i < taxa.size(); ++i)
        acc = tree.lca(acc, tree.index_of(taxa[i]));
    return tree.node(acc).id;
}

std::vector<TaxAssignment> classify_reads(const HitTable& hits, const TaxonomyTree& tree,
                                          std::size_t min_hits)
{
    if (min_hits < 1)
        throw Error("min_hits must be >= 1");
    std::vector<TaxAssignment> out;
    out.reserve(hits.size());
    for (const auto& [read, taxa] : hits) {
        for (const auto& t : taxa)
            tree.index_of(t);
        TaxAssignment a{read, std::nullopt, taxa.size()};
        if (taxa.size() >= min_hits)
            a.taxon = lca(tree, taxa);
        out.push_back(std::move(a));
    }
    return out;
}

HierarchyCounts hierarchy_counts(std::span<const TaxAssignment> assignments,
                                 const TaxonomyTree& tree)
{
    HierarchyCounts hc;
    hc.per_node.resize(tree.size());
    for (const auto& a : assignments) {
        if (!a.taxon) {
            ++hc.unclassified;
            continue;
        }
        std::size_t i = tree.index_of(*a.taxon);
        ++hc.per_node[i].direct;
        for (std::optional<std::size_t> cur = i; cur; cur = tree.node(*cur).parent)
            ++hc.per_node[*cur].cumulative;
    }
    return hc;
}

namespace {

bool skip_line(const std::string& line)
{
    return line.empty() || line.front() == '#';
}

void strip_cr(std::string& line)
{
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
}

}  // namespace

std::vector<TaxonEdge> parse_taxonomy_tsv(std::istream& in)
{
    std::vector<TaxonEdge> edges;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        strip_cr(line);
        if (skip_line(line))
            continue;
        auto f = text::split(line, '\t');
        if (f.size() != 4)
            throw ParseError(lineno, "expected 4 tab-separated fields, got " + std::to_string(f.size()));
        if (f[0].empty())
            throw ParseError(lineno, "empty child id");
        edges.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2]), std::string(f[3])});
    }
    return edges;
}

HitTable parse_hits_tsv(std::istream& in)
{
    HitTable hits;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        strip_cr(line);
        if (skip_line(line))
            continue;
        auto f = text::split(line, '\t');
        if (f.size() != 2 || f[0].empty())
            throw ParseError(lineno, "expected read_id<TAB>taxon_id");
        auto& list = hits[std::string(f[0])];
        if (!f[1].empty())
            list.emplace_back(f[1]);
    }
    return hits;
}

void add_reads_without_hits(HitTable& hits, std::span<const std::string> read_ids)
{
    for (const auto& id : read_ids)
        hits.try_emplace(id);
}

void write_assignments_tsv(std::ostream& out, std::span<const TaxAssignment> assignments)
{
    out << "#read_id\ttaxon\tn_hits\n";
    for (const auto& a : assignments)
        out << a.read_id << '\t' << (a.taxon ? *a.taxon : std::string(kUnclassified)) << '\t'
            << a.n_hits << '\n';
}

std::vector<TaxAssignment> parse_assignments_tsv(std::istream& in)
{
    std::vector<TaxAssignment> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        strip_cr(line);
        if (skip_line(line))
            continue;
        auto f = text::split(line, '\t');
        long n = 0;
        if (f.size() != 3 || f[0].empty() || !text::parse_long(f[2], n) || n < 0)
            throw ParseError(lineno, "expected read_id<TAB>taxon<TAB>n_hits");
        TaxAssignment a{std::string(f[0]), std::nullopt, static_cast<std::size_t>(n)};
        if (f[1] != kUnclassified)
            a.taxon = std::string(f[1]);
        out.push_back(std::move(a));
    }
    return out;
}

void write_hierarchy_text(std::ostream& out, const TaxonomyTree& tree, const HierarchyCounts& counts)
{
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
        std::size_t n = stack.back();
        stack.pop_back();
        const auto& node = tree.node(n);
        out << std::string(2 * node.depth, ' ') << node.name << '\t' << counts.per_node[n].direct
            << '\t' << counts.per_node[n].cumulative << '\n';
        for (auto it = node.children.rbegin(); it != node.children.rend(); ++it)
            stack.push_back(*it);
    }
    out << kUnclassified << '\t' << counts.unclassified << '\t' << counts.unclassified << '\n';
}

namespace {

nlohmann::ordered_json node_json(const TaxonomyTree& tree, const HierarchyCounts& counts, std::size_t n)
{
    const auto& node = tree.node(n);
    nlohmann::ordered_json j;
    j["id"] = node.id;
    j["name"] = node.name;
    j["rank"] = node.rank;
    j["direct"] = counts.per_node[n].direct;
    j["cumulative"] = counts.per_node[n].cumulative;
    j["children"] = nlohmann::ordered_json::array();
    for (auto c : node.children)
        j["children"].push_back(node_json(tree, counts, c));
    return j;
}

}  // namespace

std::string hierarchy_json(const TaxonomyTree& tree, const HierarchyCounts& counts)
{
    nlohmann::ordered_json doc;
    doc["tree"] = node_json(tree, counts, 0);
    doc["unclassified"] = counts.unclassified;
    return doc.dump(2) + "\n";
}

}  // namespace mpipe::taxonomy
