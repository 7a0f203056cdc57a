#pragma once

// Process-wide call counters for the expensive teacher-side paths. The
// harness reads them before and after an evaluation to show which paths ran.

#include <atomic>
#include <cstdint>

namespace stkd {

struct Counters {
  std::atomic<std::uint64_t> subgraph_samples{0};
  std::atomic<std::uint64_t> gnn_forwards{0};
};

inline Counters& counters() {
  static Counters c;
  return c;
}

struct CounterSnapshot {
  std::uint64_t subgraph_samples = 0;
  std::uint64_t gnn_forwards = 0;

  static CounterSnapshot now() {
    return {counters().subgraph_samples.load(), counters().gnn_forwards.load()};
  }
  CounterSnapshot operator-(const CounterSnapshot& o) const {
    return {subgraph_samples - o.subgraph_samples, gnn_forwards - o.gnn_forwards};
  }
};

}  // namespace stkd
