#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace pcdpem {

/// Agents are indexed 0..V-1 in memory; the edge-list text format is 1-based.
using AgentId = std::size_t;

struct Edge {
  AgentId from;
  AgentId to;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct NeighborSets {
  std::vector<AgentId> predecessors;  // j -> v, j != v
  std::vector<AgentId> successors;    // v -> j, j != v
  std::size_t degree = 0;             // J_v = |predecessors|
  std::size_t max_degree = 0;         // J_max over the network
};

/// Directed communication graph. Self-loops may be stored but never appear in
/// neighbor sets. Edges are kept sorted and unique.
class DirectedNetwork {
 public:
  DirectedNetwork() = default;
  DirectedNetwork(std::size_t num_agents, std::vector<Edge> edges, std::uint64_t seed = 0);

  std::size_t num_agents() const noexcept { return num_agents_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  const std::vector<AgentId>& predecessors(AgentId v) const;
  const std::vector<AgentId>& successors(AgentId v) const;

  /// max_v |predecessors(v)|
  std::size_t max_in_degree() const noexcept { return max_in_degree_; }

  bool has_edge(AgentId from, AgentId to) const;
  bool is_strongly_connected() const;
  /// Every agent has at least one in- and one out-neighbor (self-loops excluded).
  bool has_min_degree_one() const;

  friend bool operator==(const DirectedNetwork& a, const DirectedNetwork& b) {
    return a.num_agents_ == b.num_agents_ && a.edges_ == b.edges_;
  }

 private:
  std::size_t num_agents_ = 0;
  std::vector<Edge> edges_;
  std::uint64_t seed_ = 0;
  std::vector<std::vector<AgentId>> pred_;
  std::vector<std::vector<AgentId>> succ_;
  std::size_t max_in_degree_ = 0;
};

struct BaOptions {
  /// Deletions never push an agent's total (in + out) degree below this.
  std::size_t min_total_degree = 3;
  /// Number of random deletion orders tried before giving up.
  int retry_budget = 1000;
};

/// Barabasi-Albert preferential attachment (undirected, star seed graph as in
/// networkx), every link made bidirectional, then `deletion_fraction` of the
/// directed arcs removed at random while keeping the graph strongly connected
/// with in/out degree >= 1. Deterministic for a fixed seed.
DirectedNetwork generate_ba_directed(std::size_t num_agents, std::size_t attach,
                                     double deletion_fraction, std::uint64_t seed,
                                     const BaOptions& options = {});

NeighborSets neighbor_sets(const DirectedNetwork& net, AgentId v);

/// Entry (v, j) is 1 iff j is a successor of v.
Eigen::MatrixXi adjacency_matrix(const DirectedNetwork& net);

struct DegreeStats {
  double mean_total = 0.0;
  std::size_t max_total = 0;
  std::size_t min_total = 0;
};
DegreeStats degree_stats(const DirectedNetwork& net);

void write_edge_list(std::ostream& out, const DirectedNetwork& net);
DirectedNetwork read_edge_list(std::istream& in);
void save_edge_list(const std::string& path, const DirectedNetwork& net);
DirectedNetwork load_edge_list(const std::string& path);

}  // namespace pcdpem
