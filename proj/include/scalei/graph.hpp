#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "random.hpp"

namespace scalei {

using BinaryMatrix = Eigen::MatrixXi;
using NodeSet = std::vector<int>;

/// Directed acyclic graph over nodes 0..n-1, stored as sorted parent lists.
/// Immutable once constructed; the constructor rejects cycles, self loops and
/// out-of-range parents.
class Dag {
public:
  Dag() = default;

  explicit Dag(std::vector<NodeSet> parents) : parents_(std::move(parents)) {
    const int n = size();
    children_.assign(n, {});
    for (int i = 0; i < n; ++i) {
      auto& pa = parents_[i];
      std::sort(pa.begin(), pa.end());
      pa.erase(std::unique(pa.begin(), pa.end()), pa.end());
      for (int j : pa) {
        if (j < 0 || j >= n) throw StructuralError("parent index out of range");
        if (j == i) throw StructuralError("self loop at node " + std::to_string(i + 1));
        children_[j].push_back(i);
      }
    }
    if (!topological_order()) throw StructuralError("graph contains a cycle");
  }

  static Dag empty(int n) { return Dag(std::vector<NodeSet>(n)); }

  /// 0 -> 1 -> ... -> n-1
  static Dag chain(int n) {
    std::vector<NodeSet> pa(n);
    for (int i = 1; i < n; ++i) pa[i] = {i - 1};
    return Dag(std::move(pa));
  }

  /// 1->2, 1->3, 2->4, 3->4 (1-based labels).
  static Dag diamond() { return Dag({{}, {0}, {0}, {1, 2}}); }

  /// 1->2, 1->3, 2->3 (1-based labels).
  static Dag triangle() { return Dag({{}, {0}, {0, 1}}); }

  /// Upper-triangular random graph: edge j->i for j < i with probability p.
  static Dag random(int n, double edge_prob, std::uint64_t seed) {
    Rng rng(seed);
    std::bernoulli_distribution coin(edge_prob);
    std::vector<NodeSet> pa(n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j)
        if (coin(rng)) pa[i].push_back(j);
    return Dag(std::move(pa));
  }

  int size() const { return static_cast<int>(parents_.size()); }
  const NodeSet& parents(int i) const { return parents_[i]; }
  const NodeSet& children(int i) const { return children_[i]; }
  const std::vector<NodeSet>& parent_lists() const { return parents_; }

  bool has_edge(int from, int to) const {
    const auto& pa = parents_[to];
    return std::binary_search(pa.begin(), pa.end(), from);
  }

  /// Pa(i) with i itself.
  NodeSet closed_parents(int i) const {
    NodeSet s = parents_[i];
    s.insert(std::lower_bound(s.begin(), s.end(), i), i);
    return s;
  }

  /// Ch(i) with i itself.
  NodeSet closed_children(int i) const {
    NodeSet s = children_[i];
    s.insert(std::lower_bound(s.begin(), s.end(), i), i);
    return s;
  }

  int edge_count() const {
    int c = 0;
    for (const auto& p : parents_) c += static_cast<int>(p.size());
    return c;
  }

  int max_in_degree() const {
    std::size_t m = 0;
    for (const auto& p : parents_) m = std::max(m, p.size());
    return static_cast<int>(m);
  }

  BinaryMatrix adjacency() const {
    BinaryMatrix a = BinaryMatrix::Zero(size(), size());
    for (int i = 0; i < size(); ++i)
      for (int j : parents_[i]) a(j, i) = 1;
    return a;
  }

  std::vector<bool> descendants(int i) const {
    std::vector<bool> seen(size(), false);
    std::vector<int> stack{i};
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int c : children_[v])
        if (!seen[c]) {
          seen[c] = true;
          stack.push_back(c);
        }
    }
    return seen;
  }

  /// Nodes that are neither i nor reachable from i.
  NodeSet non_descendants(int i) const {
    auto desc = descendants(i);
    NodeSet out;
    for (int v = 0; v < size(); ++v)
      if (v != i && !desc[v]) out.push_back(v);
    return out;
  }

  /// Kahn's algorithm, smallest available index first.
  std::optional<std::vector<int>> topological_order() const {
    const int n = size();
    std::vector<int> indeg(n);
    for (int i = 0; i < n; ++i) indeg[i] = static_cast<int>(parents_[i].size());
    std::vector<int> order;
    order.reserve(n);
    std::vector<bool> done(n, false);
    for (int step = 0; step < n; ++step) {
      int pick = -1;
      for (int v = 0; v < n; ++v)
        if (!done[v] && indeg[v] == 0) {
          pick = v;
          break;
        }
      if (pick < 0) return std::nullopt;
      done[pick] = true;
      order.push_back(pick);
      for (int c : children_[pick]) --indeg[c];
    }
    return order;
  }

  bool operator==(const Dag& other) const { return parents_ == other.parents_; }

private:
  std::vector<NodeSet> parents_;
  std::vector<NodeSet> children_;
};

/// A permutation of nodes; pi[k] is the node placed at position k.
struct CausalOrder {
  std::vector<int> pi;

  int size() const { return static_cast<int>(pi.size()); }

  static CausalOrder identity(int n) {
    CausalOrder o;
    o.pi.resize(n);
    std::iota(o.pi.begin(), o.pi.end(), 0);
    return o;
  }

  bool is_permutation() const {
    std::vector<bool> seen(pi.size(), false);
    for (int v : pi) {
      if (v < 0 || v >= size() || seen[v]) return false;
      seen[v] = true;
    }
    return true;
  }

  /// P with P(k, pi[k]) = 1, so that P * [0..n-1]^T = pi^T.
  BinaryMatrix matrix() const {
    BinaryMatrix p = BinaryMatrix::Zero(size(), size());
    for (int k = 0; k < size(); ++k) p(k, pi[k]) = 1;
    return p;
  }

  std::vector<int> inverse() const {
    std::vector<int> inv(pi.size());
    for (int k = 0; k < size(); ++k) inv[pi[k]] = k;
    return inv;
  }

  /// Every edge pi[a] -> pi[b] of the graph has a < b.
  bool is_valid_for(const Dag& dag) const {
    if (size() != dag.size() || !is_permutation()) return false;
    auto pos = inverse();
    for (int v = 0; v < dag.size(); ++v)
      for (int p : dag.parents(v))
        if (pos[p] >= pos[v]) return false;
    return true;
  }

  bool operator==(const CausalOrder&) const = default;
};

inline constexpr int kDefaultOrderEnumerationCap = 10;

/// All topological orders by backtracking, in lexicographic order. Above
/// `cap` nodes only one order is produced.
inline std::vector<CausalOrder> valid_orders(const Dag& dag, int cap = kDefaultOrderEnumerationCap) {
  auto topo = dag.topological_order();
  if (!topo) throw StructuralError("graph contains a cycle");
  const int n = dag.size();
  if (n > cap) return {CausalOrder{*topo}};

  std::vector<CausalOrder> out;
  std::vector<int> indeg(n), current;
  for (int i = 0; i < n; ++i) indeg[i] = static_cast<int>(dag.parents(i).size());
  std::vector<bool> used(n, false);

  auto recurse = [&](auto&& self) -> void {
    if (static_cast<int>(current.size()) == n) {
      out.push_back(CausalOrder{current});
      return;
    }
    for (int v = 0; v < n; ++v) {
      if (used[v] || indeg[v] != 0) continue;
      used[v] = true;
      current.push_back(v);
      for (int c : dag.children(v)) --indeg[c];
      self(self);
      for (int c : dag.children(v)) ++indeg[c];
      current.pop_back();
      used[v] = false;
    }
  };
  recurse(recurse);
  return out;
}

struct SurroundMap {
  std::vector<NodeSet> sur;
  NodeSet surrounded_set;

  bool is_surrounded(int i) const { return !sur[i].empty(); }
};

namespace detail {
inline bool is_subset(const NodeSet& a, const NodeSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}
}  // namespace detail

/// sur(i) = { j != i : closed_children(i) is a subset of Ch(j) }.
inline SurroundMap surround_map(const Dag& dag) {
  const int n = dag.size();
  SurroundMap m;
  m.sur.assign(n, {});
  for (int i = 0; i < n; ++i) {
    const auto cc = dag.closed_children(i);
    for (int j = 0; j < n; ++j)
      if (j != i && detail::is_subset(cc, dag.children(j))) m.sur[i].push_back(j);
    if (!m.sur[i].empty()) m.surrounded_set.push_back(i);
  }
  return m;
}

/// Sigma(i, j) = 1 iff closed_children(j) is a subset of Ch(i).
inline BinaryMatrix sigma_mask(const Dag& dag) {
  const int n = dag.size();
  BinaryMatrix s = BinaryMatrix::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    const auto cc = dag.closed_children(j);
    for (int i = 0; i < n; ++i)
      if (detail::is_subset(cc, dag.children(i))) s(i, j) = 1;
  }
  return s;
}

/// True iff g2 has edge a -> b exactly when g1 has edge pi[a] -> pi[b].
inline bool dag_equal_up_to_order(const Dag& g1, const Dag& g2, const CausalOrder& pi) {
  if (g1.size() != g2.size() || pi.size() != g1.size())
    throw StructuralError("graph/order size mismatch");
  if (!pi.is_permutation()) throw StructuralError("order is not a permutation");
  if (g1.edge_count() != g2.edge_count()) return false;
  const int n = g1.size();
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (g2.has_edge(a, b) != g1.has_edge(pi.pi[a], pi.pi[b])) return false;
  return true;
}

/// Text form: "n=<int>" then one "i <- j,k" line per node with parents,
/// all labels 1-based.
inline std::string format_dag(const Dag& dag) {
  std::ostringstream os;
  os << "n=" << dag.size() << "\n";
  for (int i = 0; i < dag.size(); ++i) {
    if (dag.parents(i).empty()) continue;
    os << (i + 1) << " <- ";
    for (std::size_t k = 0; k < dag.parents(i).size(); ++k)
      os << (k ? "," : "") << (dag.parents(i)[k] + 1);
    os << "\n";
  }
  return os.str();
}

inline Dag parse_dag(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int n = -1;
  std::vector<NodeSet> pa;
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  auto to_int = [](const std::string& s) {
    try {
      std::size_t used = 0;
      int v = std::stoi(s, &used);
      if (used != s.size()) throw StructuralError("bad integer '" + s + "'");
      return v;
    } catch (const std::logic_error&) {
      throw StructuralError("bad integer '" + s + "'");
    }
  };
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (n < 0) {
      if (line.rfind("n=", 0) != 0) throw StructuralError("expected 'n=<int>' header");
      n = to_int(trim(line.substr(2)));
      if (n < 0) throw StructuralError("negative node count");
      pa.assign(n, {});
      continue;
    }
    auto arrow = line.find("<-");
    if (arrow == std::string::npos) throw StructuralError("expected 'i <- parents' line");
    int child = to_int(trim(line.substr(0, arrow))) - 1;
    if (child < 0 || child >= n) throw StructuralError("node label out of range");
    std::istringstream ps(line.substr(arrow + 2));
    std::string tok;
    while (std::getline(ps, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      pa[child].push_back(to_int(tok) - 1);
    }
  }
  if (n < 0) throw StructuralError("missing 'n=<int>' header");
  return Dag(std::move(pa));
}

}  // namespace scalei
