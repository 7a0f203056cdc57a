#pragma once

// Recursive fixed-fanout neighborhood sampling around a purchase sequence.
//
// A Subgraph is a sampling tree: every sampled neighbor becomes its own node
// instance, so an entity reached along two paths appears twice. Instances are
// stored breadth first: the non-pad centers in sequence order, then the user
// node, then depth-1 nodes, then depth-2 nodes, and so on. Each instance's
// children are contiguous, so `child_offsets` describes all sampled edges.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "stkd/data/sequences.hpp"
#include "stkd/instrumentation.hpp"
#include "stkd/random.hpp"
#include "stkd/stkg/graph.hpp"

namespace stkd::stkg {

inline constexpr std::uint32_t kNoNode = std::numeric_limits<std::uint32_t>::max();

struct Subgraph {
  std::vector<std::uint32_t> centers;      // entity id per sequence position, 0 = PAD
  std::vector<std::uint32_t> center_node;  // instance per position, kNoNode for PAD
  std::uint32_t user_node = 0;             // user entity id
  std::uint32_t user_instance = kNoNode;

  std::vector<std::uint32_t> node_entity;
  std::vector<std::uint8_t> node_depth;
  // child_offsets[i]..child_offsets[i+1] index the sampled edges of instance
  // i; edge k leads to instance first_child + k with edge_relation[k].
  std::vector<std::uint32_t> child_offsets;
  std::vector<std::uint32_t> edge_relation;
  std::uint32_t first_child = 0;  // number of depth-0 instances (centers + user)
  std::size_t cold_centers = 0;   // non-pad centers with no edges in the graph

  std::size_t num_nodes() const { return node_entity.size(); }
  std::size_t num_edges() const { return edge_relation.size(); }
  std::uint32_t edge_child(std::size_t k) const { return first_child + static_cast<std::uint32_t>(k); }
  /// Instances with depth <= max_depth form a prefix; returns its length.
  std::size_t prefix_upto(std::size_t max_depth) const {
    std::size_t p = 0;
    while (p < node_depth.size() && node_depth[p] <= max_depth) ++p;
    return p;
  }
};

/// Picks min(k, n) distinct indices from [0, n) uniformly (Floyd's
/// algorithm), returned in ascending order.
inline std::vector<std::uint32_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::uint32_t> out;
  if (k >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::uint32_t>(i);
    return out;
  }
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    const auto t = static_cast<std::uint32_t>(uniform_index(rng, j + 1));
    if (std::find(out.begin(), out.end(), t) == out.end())
      out.push_back(t);
    else
      out.push_back(static_cast<std::uint32_t>(j));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Samples fanouts.size() hops around the non-pad items of `seq`. The user
/// node is included as a lone instance. Deterministic in (seed, seq.id).
inline Subgraph sample_subgraph(const data::Sequence& seq, const Stkg& g, const std::vector<std::size_t>& fanouts,
                                std::uint64_t seed) {
  for (auto s : fanouts)
    if (s == 0) throw std::invalid_argument("sample_subgraph: fanouts must be positive");
  if (fanouts.size() > 250) throw std::invalid_argument("sample_subgraph: depth too large");
  counters().subgraph_samples.fetch_add(1, std::memory_order_relaxed);
  Rng rng = make_rng(seed, {0x5ab9ULL, seq.id});
  Subgraph sg;
  sg.centers.resize(seq.items.size(), 0);
  sg.center_node.assign(seq.items.size(), kNoNode);
  for (std::size_t i = 0; i < seq.items.size(); ++i) {
    if (seq.items[i] == 0) continue;
    const auto e = g.takeaway_entity(seq.items[i]);
    sg.centers[i] = e;
    sg.center_node[i] = static_cast<std::uint32_t>(sg.node_entity.size());
    sg.node_entity.push_back(e);
    sg.node_depth.push_back(0);
    if (g.degree(e) == 0) sg.cold_centers += 1;
  }
  sg.user_node = g.user_entity(seq.user);
  sg.user_instance = static_cast<std::uint32_t>(sg.node_entity.size());
  sg.node_entity.push_back(sg.user_node);
  sg.node_depth.push_back(0);
  sg.first_child = static_cast<std::uint32_t>(sg.node_entity.size());
  sg.child_offsets.push_back(0);

  // Expand frontier [begin, end) one hop at a time. The user instance never
  // expands; it only carries the user's own embedding into the gate.
  std::size_t begin = 0, end = sg.node_entity.size();
  for (std::size_t depth = 0; depth < fanouts.size(); ++depth) {
    for (std::size_t i = begin; i < end; ++i) {
      if (i != sg.user_instance) {
        const auto nb = g.neighbors(sg.node_entity[i]);
        for (auto pick : sample_without_replacement(rng, nb.size(), fanouts[depth])) {
          sg.node_entity.push_back(nb[pick].entity);
          sg.node_depth.push_back(static_cast<std::uint8_t>(depth + 1));
          sg.edge_relation.push_back(nb[pick].relation);
        }
      }
      sg.child_offsets.push_back(static_cast<std::uint32_t>(sg.edge_relation.size()));
    }
    begin = end;
    end = sg.node_entity.size();
  }
  // Leaves have no children.
  while (sg.child_offsets.size() < sg.node_entity.size() + 1) sg.child_offsets.push_back(sg.child_offsets.back());
  return sg;
}

}  // namespace stkd::stkg
