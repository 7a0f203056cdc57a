#pragma once

// Seeded synthetic purchase logs with planted spatial-temporal structure:
//  - every user alternates between a home and a work region (sticky Markov
//    location), with work visits on weekday daytime and home visits in the
//    evening or at weekends;
//  - takeaways live in one shop region and belong to a category with
//    time-slot affinity (e.g. fast food at noon);
//  - co-purchase rules: after buying A the next purchase is B with the
//    rule's probability;
//  - a noise rate replaces any purchase by a uniformly random takeaway.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "stkd/data/events.hpp"
#include "stkd/data/geo.hpp"
#include "stkd/errors.hpp"
#include "stkd/random.hpp"

namespace stkd::data {

inline constexpr int kSlotHours[4] = {8, 12, 18, 21};  // morning, noon, evening, night

struct PairRule {
  std::uint32_t from = 0;  // 0-based synthetic takeaway index
  std::uint32_t to = 0;
  double probability = 0.0;
};

struct SlotRule {
  std::uint32_t category = 0;
  std::uint32_t slot = 0;  // index into kSlotHours
  double weight = 0.0;     // in [0, 1]; added affinity for that slot
};

struct SyntheticConfig {
  std::size_t n_users = 200;
  std::size_t n_takeaways = 500;
  std::size_t n_regions = 12;
  std::size_t n_categories = 8;
  std::size_t n_brands = 40;
  std::size_t events_per_user = 24;
  double noise = 0.3;
  double stay_probability = 0.8;  // location persistence between purchases
  double preference_weight = 3.0;  // extra weight for a user's favourite categories
  double slot_weight = 4.0;        // multiplier on slot-rule affinity
  std::size_t n_pairs = 60;        // auto-generated co-purchase rules when `pairs` is empty
  double pair_probability = 0.6;
  std::vector<PairRule> pairs;
  std::vector<SlotRule> slot_rules;  // auto-generated when empty
  double center_lat = 30.5928;
  double center_lon = 114.3055;
  double region_spacing_km = 3.0;
  std::int64_t start_timestamp = 1672531200;  // 2023-01-01T00:00:00Z, a Sunday
  std::uint64_t seed = 42;
};

struct SyntheticWorld {
  std::vector<std::string> region_geohash;
  std::vector<std::uint32_t> takeaway_region;
  std::vector<std::uint32_t> takeaway_category;
  std::vector<std::uint32_t> takeaway_brand;
  std::vector<PairRule> pairs;
  std::vector<SlotRule> slot_rules;
};

namespace detail {

inline void validate(const SyntheticConfig& c) {
  if (c.n_users == 0 || c.n_takeaways == 0 || c.n_regions == 0 || c.n_categories == 0 || c.n_brands == 0 ||
      c.events_per_user == 0)
    throw ConfigError("synthetic config: all counts must be positive");
  if (c.n_regions < 2) throw ConfigError("synthetic config: need at least 2 regions");
  auto unit = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("synthetic config: ") + what + " must be in [0,1]");
  };
  unit(c.noise, "noise");
  unit(c.stay_probability, "stay_probability");
  unit(c.pair_probability, "pair_probability");
  std::vector<double> outgoing(c.n_takeaways, 0.0);
  for (auto& r : c.pairs) {
    unit(r.probability, "pair probability");
    if (r.from >= c.n_takeaways || r.to >= c.n_takeaways || r.from == r.to)
      throw ConfigError("synthetic config: pair rule references an invalid takeaway");
    outgoing[r.from] += r.probability;
  }
  for (std::size_t i = 0; i < outgoing.size(); ++i)
    if (outgoing[i] > 1.0 + 1e-12)
      throw ConfigError("synthetic config: co-purchase probabilities after takeaway " + std::to_string(i) +
                        " sum to " + std::to_string(outgoing[i]));
  for (auto& r : c.slot_rules) {
    unit(r.weight, "slot rule weight");
    if (r.category >= c.n_categories || r.slot >= 4) throw ConfigError("synthetic config: bad slot rule");
  }
}

}  // namespace detail

inline SyntheticWorld make_world(const SyntheticConfig& c) {
  detail::validate(c);
  SyntheticWorld w;
  Rng rng = make_rng(c.seed, {1});
  // Regions on a jittered grid around the city center.
  const std::size_t side = static_cast<std::size_t>(std::ceil(std::sqrt(double(c.n_regions))));
  const double km_per_deg_lat = 111.195;
  const double km_per_deg_lon = km_per_deg_lat * std::cos(c.center_lat * 3.14159265358979323846 / 180.0);
  for (std::size_t r = 0; r < c.n_regions; ++r) {
    const double gx = double(r % side) - double(side - 1) / 2.0;
    const double gy = double(r / side) - double(side - 1) / 2.0;
    const double jx = (uniform01(rng) - 0.5) * 0.3, jy = (uniform01(rng) - 0.5) * 0.3;
    const LatLon p{c.center_lat + (gy + jy) * c.region_spacing_km / km_per_deg_lat,
                   c.center_lon + (gx + jx) * c.region_spacing_km / km_per_deg_lon};
    w.region_geohash.push_back(geohash_encode(p, 6));
  }
  for (std::size_t t = 0; t < c.n_takeaways; ++t) {
    w.takeaway_region.push_back(static_cast<std::uint32_t>(uniform_index(rng, c.n_regions)));
    w.takeaway_category.push_back(static_cast<std::uint32_t>(uniform_index(rng, c.n_categories)));
    w.takeaway_brand.push_back(static_cast<std::uint32_t>(uniform_index(rng, c.n_brands)));
  }
  w.slot_rules = c.slot_rules;
  if (w.slot_rules.empty())
    for (std::uint32_t cat = 0; cat < c.n_categories; ++cat) w.slot_rules.push_back({cat, cat % 4, 1.0});
  w.pairs = c.pairs;
  if (w.pairs.empty()) {
    std::vector<std::uint8_t> used(c.n_takeaways, 0);
    for (std::size_t k = 0, attempts = 0; k < c.n_pairs && attempts < 100 * c.n_pairs; ++attempts) {
      const auto a = static_cast<std::uint32_t>(uniform_index(rng, c.n_takeaways));
      const auto b = static_cast<std::uint32_t>(uniform_index(rng, c.n_takeaways));
      if (a == b || used[a] || w.takeaway_region[a] != w.takeaway_region[b]) continue;
      used[a] = 1;
      w.pairs.push_back({a, b, c.pair_probability});
      ++k;
    }
  }
  return w;
}

inline std::string synthetic_user_key(std::size_t u) { return "u" + std::to_string(u); }
inline std::string synthetic_takeaway_key(std::size_t t) { return "t" + std::to_string(t); }

/// Generates the event log. Identical config (including seed) gives an
/// identical event sequence.
inline std::vector<PurchaseEvent> generate_synthetic(const SyntheticConfig& c, SyntheticWorld* world_out = nullptr) {
  const SyntheticWorld w = make_world(c);
  if (world_out) *world_out = w;

  std::vector<std::vector<std::uint32_t>> by_region(c.n_regions);
  for (std::uint32_t t = 0; t < c.n_takeaways; ++t) by_region[w.takeaway_region[t]].push_back(t);
  std::vector<std::vector<double>> affinity(c.n_categories, std::vector<double>(4, 0.0));
  for (auto& r : w.slot_rules) affinity[r.category][r.slot] += r.weight;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rules(c.n_takeaways);
  for (auto& r : w.pairs) rules[r.from].push_back({r.to, r.probability});

  const double km_per_deg_lat = 111.195;
  std::vector<PurchaseEvent> out;
  out.reserve(c.n_users * c.events_per_user);
  for (std::size_t u = 0; u < c.n_users; ++u) {
    Rng rng = make_rng(c.seed, {2, u});
    const auto home = static_cast<std::uint32_t>(uniform_index(rng, c.n_regions));
    auto work = static_cast<std::uint32_t>(uniform_index(rng, c.n_regions - 1));
    if (work >= home) ++work;
    const std::uint32_t fav1 = static_cast<std::uint32_t>(uniform_index(rng, c.n_categories));
    const std::uint32_t fav2 = static_cast<std::uint32_t>(uniform_index(rng, c.n_categories));
    const std::string age_band = "a" + std::to_string(uniform_index(rng, 5));
    // The user's own position near each region center (a different geohash6 cell).
    auto near = [&](std::uint32_t region) {
      const auto box = geohash_decode(w.region_geohash[region]).center();
      const double dlat = (uniform01(rng) - 0.5) * 2.0 / km_per_deg_lat;
      const double dlon = (uniform01(rng) - 0.5) * 2.0 / km_per_deg_lat;
      return geohash_encode({box.lat + dlat, box.lon + dlon}, 6);
    };
    const std::string home_gh = near(home), work_gh = near(work);

    bool at_work = bernoulli(rng, 0.5);
    std::int64_t day = static_cast<std::int64_t>(uniform_index(rng, 7));
    std::int64_t prev_item = -1;
    for (std::size_t k = 0; k < c.events_per_user; ++k) {
      if (k > 0 && !bernoulli(rng, c.stay_probability)) at_work = !at_work;
      day += 1 + static_cast<std::int64_t>(uniform_index(rng, 2));
      // Work happens on weekdays (day 0 is a Sunday).
      if (at_work)
        while (day % 7 == 0 || day % 7 == 6) ++day;
      const std::uint32_t slot = at_work ? static_cast<std::uint32_t>(uniform_index(rng, 2))
                                         : 2 + static_cast<std::uint32_t>(uniform_index(rng, 2));
      const std::uint32_t region = at_work ? work : home;

      std::uint32_t item;
      if (bernoulli(rng, c.noise)) {
        item = static_cast<std::uint32_t>(uniform_index(rng, c.n_takeaways));
      } else {
        std::int64_t chosen = -1;
        std::vector<std::uint32_t> excluded;
        if (prev_item >= 0) {
          double r = uniform01(rng), acc = 0.0;
          for (auto& [to, p] : rules[prev_item]) {
            excluded.push_back(to);
            acc += p;
            if (chosen < 0 && r < acc) chosen = to;
          }
        }
        if (chosen < 0) {
          const auto& pool = by_region[region].empty() ? by_region[(region + 1) % c.n_regions] : by_region[region];
          std::vector<double> weight(pool.size());
          double total = 0.0;
          for (std::size_t q = 0; q < pool.size(); ++q) {
            const auto t = pool[q];
            const bool skip = std::find(excluded.begin(), excluded.end(), t) != excluded.end();
            const auto cat = w.takeaway_category[t];
            double wt = 1.0 + c.slot_weight * affinity[cat][slot];
            if (cat == fav1 || cat == fav2) wt += c.preference_weight;
            weight[q] = skip ? 0.0 : wt;
            total += weight[q];
          }
          if (total <= 0.0) {
            chosen = static_cast<std::int64_t>(uniform_index(rng, c.n_takeaways));
          } else {
            double r = uniform01(rng) * total;
            std::size_t q = 0;
            while (q + 1 < pool.size() && (weight[q] == 0.0 || r >= weight[q])) {
              r -= weight[q];
              ++q;
            }
            chosen = pool[q];
          }
        }
        item = static_cast<std::uint32_t>(chosen);
      }
      prev_item = item;

      PurchaseEvent ev;
      ev.user_id = synthetic_user_key(u);
      ev.takeaway_id = synthetic_takeaway_key(item);
      ev.timestamp = c.start_timestamp + day * 86400 + kSlotHours[slot] * 3600 +
                     static_cast<std::int64_t>(uniform_index(rng, 3600));
      ev.user_geohash6 = at_work ? work_gh : home_gh;
      ev.shop_geohash6 = w.region_geohash[w.takeaway_region[item]];
      ev.attributes = {{"category", "c" + std::to_string(w.takeaway_category[item])},
                       {"brand", "b" + std::to_string(w.takeaway_brand[item])},
                       {"region", w.region_geohash[w.takeaway_region[item]]},
                       {"u.age", age_band}};
      out.push_back(std::move(ev));
    }
  }
  return out;
}

inline void write_events(std::ostream& os, const std::vector<PurchaseEvent>& events) {
  os << "# user_id\ttakeaway_id\ttimestamp\tuser_geohash6\tshop_geohash6\tattributes...\n";
  for (auto& e : events) os << format_record(e) << '\n';
}

}  // namespace stkd::data
