#pragma once

#include <algorithm>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "duet/errors.hpp"
#include "duet/rng.hpp"

namespace duet {

/// Ordered pair parent -> child, 0-based.
struct Edge {
    int from = 0;
    int to = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Directed acyclic graph over nodes 0..d-1.
///
/// Construction validates acyclicity and computes a topological order
/// (Kahn's algorithm, smallest ready index first, so the order is canonical).
class Dag {
public:
    Dag() = default;

    explicit Dag(int d, std::vector<Edge> edges = {}) : d_(d), edges_(std::move(edges)) {
        if (d < 1) throw InvalidArgument("Dag: node count must be >= 1");
        std::sort(edges_.begin(), edges_.end());
        edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
        parents_.assign(d, {});
        children_.assign(d, {});
        for (const auto& e : edges_) {
            if (e.from < 0 || e.from >= d || e.to < 0 || e.to >= d)
                throw InvalidArgument("Dag: edge endpoint out of range");
            if (e.from == e.to) throw InvalidArgument("Dag: self-loop on node " + std::to_string(e.from));
            parents_[e.to].push_back(e.from);
            children_[e.from].push_back(e.to);
        }
        for (auto& p : parents_) std::sort(p.begin(), p.end());
        order_ = topological_order(d, children_, parents_);
        if (static_cast<int>(order_.size()) != d) throw InvalidArgument("Dag: graph contains a cycle");
    }

    int size() const noexcept { return d_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<int>& parents(int i) const { return parents_.at(i); }
    const std::vector<int>& children(int i) const { return children_.at(i); }
    const std::vector<int>& order() const noexcept { return order_; }

    bool has_edge(int from, int to) const {
        return std::binary_search(parents_.at(to).begin(), parents_.at(to).end(), from);
    }

    /// Adjacency with A(i, j) = true iff j -> i, matching the row/column
    /// layout of the inverse mixing Jacobian.
    BoolMatrix parent_matrix() const {
        BoolMatrix a = BoolMatrix::Constant(d_, d_, false);
        for (const auto& e : edges_) a(e.to, e.from) = true;
        return a;
    }

    /// Relabels node i as perm[i].
    Dag relabeled(const std::vector<int>& perm) const {
        std::vector<Edge> out;
        out.reserve(edges_.size());
        for (const auto& e : edges_) out.push_back({perm.at(e.from), perm.at(e.to)});
        return Dag(d_, std::move(out));
    }

    static bool is_acyclic(int d, const std::vector<Edge>& edges) {
        std::vector<std::vector<int>> ch(d), pa(d);
        for (const auto& e : edges) {
            if (e.from == e.to) return false;
            ch[e.from].push_back(e.to);
            pa[e.to].push_back(e.from);
        }
        return static_cast<int>(topological_order(d, ch, pa).size()) == d;
    }

    friend bool operator==(const Dag& a, const Dag& b) { return a.d_ == b.d_ && a.edges_ == b.edges_; }

private:
    static std::vector<int> topological_order(int d, const std::vector<std::vector<int>>& children,
                                              const std::vector<std::vector<int>>& parents) {
        std::vector<int> indeg(d);
        for (int i = 0; i < d; ++i) indeg[i] = static_cast<int>(parents[i].size());
        std::priority_queue<int, std::vector<int>, std::greater<>> ready;
        for (int i = 0; i < d; ++i)
            if (indeg[i] == 0) ready.push(i);
        std::vector<int> order;
        order.reserve(d);
        while (!ready.empty()) {
            const int v = ready.top();
            ready.pop();
            order.push_back(v);
            for (int c : children[v])
                if (--indeg[c] == 0) ready.push(c);
        }
        return order;
    }

    int d_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::vector<int>> parents_;
    std::vector<std::vector<int>> children_;
    std::vector<int> order_;
};

/// Random DAG: a uniformly random causal order, then each forward pair is an
/// edge with probability `edge_prob`.
inline Dag random_dag(int d, double edge_prob, Philox4x32& rng) {
    std::vector<int> perm(d);
    for (int i = 0; i < d; ++i) perm[i] = i;
    for (int i = d - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    std::vector<Edge> edges;
    for (int a = 0; a < d; ++a)
        for (int b = a + 1; b < d; ++b)
            if (rng.uniform01() < edge_prob) edges.push_back({perm[a], perm[b]});
    return Dag(d, std::move(edges));
}

/// Support of the inverse mixing Jacobian implied by the graph: (i, j) is
/// true iff i == j or j is a parent of i.
inline BoolMatrix ground_truth_support(const Dag& dag) {
    BoolMatrix s = dag.parent_matrix();
    for (int i = 0; i < dag.size(); ++i) s(i, i) = true;
    return s;
}

} // namespace duet
