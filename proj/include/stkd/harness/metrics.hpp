#pragma once

// Ranked evaluation against sampled negatives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "stkd/random.hpp"
#include "stkd/stkg/sampling.hpp"

namespace stkd::harness {

/// 1-based rank of the target among the candidates. A negative that ties
/// with the target counts as ranked ahead of it.
template <class T>
std::size_t rank_of(T target_score, std::span<const T> negative_scores) {
  std::size_t ahead = 0;
  for (auto s : negative_scores) ahead += s >= target_score;
  return 1 + ahead;
}

inline double ndcg_gain(std::size_t rank, std::size_t k) {
  return rank <= k ? 1.0 / std::log2(double(rank) + 1.0) : 0.0;
}

struct MetricsReport {
  std::map<std::size_t, double> hr;
  std::map<std::size_t, double> ndcg;
  std::size_t users = 0;
  std::size_t short_candidate_users = 0;  // fewer negatives available than requested
  double train_seconds = 0.0;
  double predict_seconds = 0.0;
  std::size_t predict_batches = 0;
  std::uint64_t subgraph_samples = 0;  // during prediction only
  std::uint64_t gnn_forwards = 0;      // during prediction only
  std::uint64_t seed = 0;
  std::string split;
  std::string variant;
  std::string strategy;
  nlohmann::json config;
  std::string config_hash;
  std::string vocab_hash;

  double predict_seconds_per_batch() const {
    return predict_batches ? predict_seconds / double(predict_batches) : 0.0;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (auto& [k, v] : hr) j["hr"][std::to_string(k)] = v;
    for (auto& [k, v] : ndcg) j["ndcg"][std::to_string(k)] = v;
    j["users"] = users;
    j["short_candidate_users"] = short_candidate_users;
    j["train_seconds"] = train_seconds;
    j["predict_seconds"] = predict_seconds;
    j["predict_batches"] = predict_batches;
    j["predict_seconds_per_batch"] = predict_seconds_per_batch();
    j["subgraph_samples"] = subgraph_samples;
    j["gnn_forwards"] = gnn_forwards;
    j["seed"] = seed;
    j["split"] = split;
    j["variant"] = variant;
    j["strategy"] = strategy;
    j["config"] = config;
    j["config_hash"] = config_hash;
    j["vocab_hash"] = vocab_hash;
    return j;
  }
};

/// Averages HR@k and NDCG@k over a list of ranks, summed in list order.
inline void fill_metrics(MetricsReport& r, std::span<const std::size_t> ranks, std::span<const std::size_t> k_list) {
  r.users = ranks.size();
  for (auto k : k_list) {
    double hit = 0.0, gain = 0.0;
    for (auto rank : ranks) {
      hit += rank <= k ? 1.0 : 0.0;
      gain += ndcg_gain(rank, k);
    }
    const double n = ranks.empty() ? 1.0 : double(ranks.size());
    r.hr[k] = hit / n;
    r.ndcg[k] = gain / n;
  }
}

/// Per-user negatives: takeaways in 1..num_takeaways the user never bought,
/// sampled without replacement from a stream keyed by (seed, user).
class NegativeSampler {
 public:
  NegativeSampler(std::size_t num_takeaways, std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> purchased,
                  std::size_t count, std::uint64_t seed)
      : num_takeaways_(num_takeaways), purchased_(std::move(purchased)), count_(count), seed_(seed) {}

  /// Returns the sampled ids (ascending) and whether fewer than `count` were available.
  std::pair<std::vector<std::uint32_t>, bool> sample(std::uint32_t user) const {
    static const std::vector<std::uint32_t> none;
    const auto it = purchased_.find(user);
    const auto& bought = it == purchased_.end() ? none : it->second;
    std::vector<std::uint32_t> pool;
    pool.reserve(num_takeaways_);
    for (std::uint32_t t = 1; t <= num_takeaways_; ++t)
      if (!std::binary_search(bought.begin(), bought.end(), t)) pool.push_back(t);
    Rng rng = make_rng(seed_, {0xe7a1ULL, user});
    std::vector<std::uint32_t> out;
    for (auto i : stkg::sample_without_replacement(rng, pool.size(), count_)) out.push_back(pool[i]);
    return {out, pool.size() < count_};
  }

 private:
  std::size_t num_takeaways_;
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> purchased_;
  std::size_t count_;
  std::uint64_t seed_;
};

}  // namespace stkd::harness
