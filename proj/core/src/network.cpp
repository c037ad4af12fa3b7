#include "pcdpem/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "pcdpem/errors.hpp"
#include "pcdpem/rng.hpp"

namespace pcdpem {

namespace {

bool reaches_all(std::size_t n, const std::vector<std::vector<AgentId>>& adj) {
  if (n == 0) return true;
  std::vector<char> seen(n, 0);
  std::vector<AgentId> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    AgentId v = stack.back();
    stack.pop_back();
    for (AgentId j : adj[v]) {
      if (!seen[j]) {
        seen[j] = 1;
        ++count;
        stack.push_back(j);
      }
    }
  }
  return count == n;
}

bool strongly_connected(std::size_t n, const std::vector<std::vector<AgentId>>& succ,
                        const std::vector<std::vector<AgentId>>& pred) {
  return reaches_all(n, succ) && reaches_all(n, pred);
}

void erase_value(std::vector<AgentId>& v, AgentId x) {
  auto it = std::find(v.begin(), v.end(), x);
  if (it != v.end()) v.erase(it);
}

}  // namespace

DirectedNetwork::DirectedNetwork(std::size_t num_agents, std::vector<Edge> edges, std::uint64_t seed)
    : num_agents_(num_agents), edges_(std::move(edges)), seed_(seed) {
  for (const Edge& e : edges_) {
    if (e.from >= num_agents_ || e.to >= num_agents_) {
      throw ParameterError("edge endpoint out of range: (" + std::to_string(e.from) + ", " +
                           std::to_string(e.to) + ") with V=" + std::to_string(num_agents_));
    }
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  pred_.assign(num_agents_, {});
  succ_.assign(num_agents_, {});
  for (const Edge& e : edges_) {
    if (e.from == e.to) continue;
    succ_[e.from].push_back(e.to);
    pred_[e.to].push_back(e.from);
  }
  for (auto& p : pred_) std::sort(p.begin(), p.end());
  for (auto& s : succ_) std::sort(s.begin(), s.end());
  for (const auto& p : pred_) max_in_degree_ = std::max(max_in_degree_, p.size());
}

const std::vector<AgentId>& DirectedNetwork::predecessors(AgentId v) const {
  if (v >= num_agents_) throw ParameterError("agent id out of range: " + std::to_string(v));
  return pred_[v];
}

const std::vector<AgentId>& DirectedNetwork::successors(AgentId v) const {
  if (v >= num_agents_) throw ParameterError("agent id out of range: " + std::to_string(v));
  return succ_[v];
}

bool DirectedNetwork::has_edge(AgentId from, AgentId to) const {
  return std::binary_search(edges_.begin(), edges_.end(), Edge{from, to});
}

bool DirectedNetwork::is_strongly_connected() const {
  return strongly_connected(num_agents_, succ_, pred_);
}

bool DirectedNetwork::has_min_degree_one() const {
  for (std::size_t v = 0; v < num_agents_; ++v) {
    if (pred_[v].empty() || succ_[v].empty()) return false;
  }
  return true;
}

DirectedNetwork generate_ba_directed(std::size_t num_agents, std::size_t attach,
                                     double deletion_fraction, std::uint64_t seed,
                                     const BaOptions& options) {
  if (attach < 1 || num_agents <= attach) {
    throw ParameterError("BA generator requires num_agents > attach >= 1");
  }
  if (!(deletion_fraction >= 0.0 && deletion_fraction < 1.0)) {
    throw ParameterError("deletion_fraction must lie in [0, 1)");
  }
  Rng rng = make_rng(seed, {stream::kTopology});

  // Preferential attachment on an undirected graph seeded with star(attach).
  std::set<std::pair<AgentId, AgentId>> undirected;
  std::vector<AgentId> repeated;
  for (AgentId i = 1; i <= attach; ++i) {
    undirected.insert({0, i});
    repeated.push_back(0);
    repeated.push_back(i);
  }
  for (AgentId source = attach + 1; source < num_agents; ++source) {
    std::set<AgentId> targets;
    std::uniform_int_distribution<std::size_t> pick(0, repeated.size() - 1);
    while (targets.size() < attach) targets.insert(repeated[pick(rng)]);
    for (AgentId t : targets) {
      undirected.insert({std::min(source, t), std::max(source, t)});
      repeated.push_back(t);
      repeated.push_back(source);
    }
  }

  std::vector<Edge> arcs;
  arcs.reserve(2 * undirected.size());
  for (const auto& [a, b] : undirected) {
    arcs.push_back({a, b});
    arcs.push_back({b, a});
  }
  const auto target_deletions =
      static_cast<std::size_t>(std::llround(deletion_fraction * static_cast<double>(arcs.size())));
  if (target_deletions == 0) return DirectedNetwork(num_agents, arcs, seed);

  for (int attempt = 0; attempt < options.retry_budget; ++attempt) {
    std::vector<std::vector<AgentId>> succ(num_agents), pred(num_agents);
    for (const Edge& e : arcs) {
      succ[e.from].push_back(e.to);
      pred[e.to].push_back(e.from);
    }
    std::vector<std::size_t> order(arcs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> removed(arcs.size(), 0);
    std::size_t deleted = 0;
    for (std::size_t idx : order) {
      if (deleted == target_deletions) break;
      const Edge& e = arcs[idx];
      if (succ[e.from].size() < 2 || pred[e.to].size() < 2) continue;
      if (succ[e.from].size() + pred[e.from].size() <= options.min_total_degree) continue;
      if (succ[e.to].size() + pred[e.to].size() <= options.min_total_degree) continue;
      erase_value(succ[e.from], e.to);
      erase_value(pred[e.to], e.from);
      if (strongly_connected(num_agents, succ, pred)) {
        removed[idx] = 1;
        ++deleted;
      } else {
        succ[e.from].push_back(e.to);
        pred[e.to].push_back(e.from);
      }
    }
    if (deleted == target_deletions) {
      std::vector<Edge> kept;
      kept.reserve(arcs.size() - deleted);
      for (std::size_t i = 0; i < arcs.size(); ++i) {
        if (!removed[i]) kept.push_back(arcs[i]);
      }
      return DirectedNetwork(num_agents, std::move(kept), seed);
    }
  }
  throw ConstructionError("could not delete " + std::to_string(target_deletions) +
                          " arcs while keeping the graph strongly connected within the retry budget of " +
                          std::to_string(options.retry_budget) + " attempts");
}

NeighborSets neighbor_sets(const DirectedNetwork& net, AgentId v) {
  if (v >= net.num_agents()) {
    throw ParameterError("agent id " + std::to_string(v) + " out of range for V=" +
                         std::to_string(net.num_agents()));
  }
  NeighborSets out;
  out.predecessors = net.predecessors(v);
  out.successors = net.successors(v);
  out.degree = out.predecessors.size();
  out.max_degree = net.max_in_degree();
  return out;
}

Eigen::MatrixXi adjacency_matrix(const DirectedNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.num_agents());
  Eigen::MatrixXi a = Eigen::MatrixXi::Zero(n, n);
  for (AgentId v = 0; v < net.num_agents(); ++v) {
    for (AgentId j : net.successors(v)) a(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(j)) = 1;
  }
  return a;
}

DegreeStats degree_stats(const DirectedNetwork& net) {
  DegreeStats s;
  if (net.num_agents() == 0) return s;
  std::size_t total = 0;
  s.min_total = static_cast<std::size_t>(-1);
  for (AgentId v = 0; v < net.num_agents(); ++v) {
    const std::size_t d = net.predecessors(v).size() + net.successors(v).size();
    total += d;
    s.max_total = std::max(s.max_total, d);
    s.min_total = std::min(s.min_total, d);
  }
  s.mean_total = static_cast<double>(total) / static_cast<double>(net.num_agents());
  return s;
}

void write_edge_list(std::ostream& out, const DirectedNetwork& net) {
  out << net.num_agents() << ' ' << net.num_edges() << ' ' << net.seed() << '\n';
  for (const Edge& e : net.edges()) out << (e.from + 1) << ' ' << (e.to + 1) << '\n';
}

DirectedNetwork read_edge_list(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParameterError("edge list: missing header line");
  std::istringstream header(line);
  std::size_t v = 0, e = 0;
  std::uint64_t seed = 0;
  if (!(header >> v >> e >> seed)) throw ParameterError("edge list: header must be 'V E seed'");
  std::vector<Edge> edges;
  edges.reserve(e);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::size_t from = 0, to = 0;
    if (!(row >> from >> to) || from < 1 || to < 1) {
      throw ParameterError("edge list: malformed line '" + line + "'");
    }
    edges.push_back({from - 1, to - 1});
  }
  if (edges.size() != e) {
    throw ParameterError("edge list: header announces " + std::to_string(e) + " edges, found " +
                         std::to_string(edges.size()));
  }
  return DirectedNetwork(v, std::move(edges), seed);
}

void save_edge_list(const std::string& path, const DirectedNetwork& net) {
  std::ofstream out(path);
  if (!out) throw ParameterError("cannot open for writing: " + path);
  write_edge_list(out, net);
}

DirectedNetwork load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open: " + path);
  return read_edge_list(in);
}

}  // namespace pcdpem
