#pragma once

// Leave-one-out sequence construction and the on-disk sample cache.

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "stkd/binary_io.hpp"
#include "stkd/data/events.hpp"
#include "stkd/data/geo.hpp"
#include "stkd/errors.hpp"

namespace stkd::data {

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw UsageError("unknown split '" + s + "' (expected train, valid or test)");
}

/// One next-item sample. The three arrays are left-padded to length n with 0,
/// most recent purchase rightmost. Distance ids are bucket + 1 so that 0 can
/// serve as PAD.
struct Sequence {
  std::uint32_t id = 0;
  std::uint32_t user = 0;
  std::vector<std::uint32_t> items;
  std::vector<std::uint32_t> regions;
  std::vector<std::uint32_t> distances;
  std::uint32_t target = 0;
  Split split = Split::train;

  std::size_t length() const {
    return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [](auto v) { return v != 0; }));
  }
  std::size_t first_real() const { return items.size() - length(); }
};

struct SequenceConfig {
  std::size_t n = 128;
  std::size_t train_cap_per_user = 0;  // 0 = unlimited, otherwise keep the most recent pairs
};

struct SequenceReport {
  std::size_t users_skipped = 0;        // fewer than 2 purchases
  std::size_t users_train_only = 0;     // exactly 2 purchases: no valid/test
  std::size_t train = 0, valid = 0, test = 0;
};

/// Role of every event under the leave-one-out rule: per user with at least 3
/// purchases the last is the test target and the second-to-last the
/// validation target; everything else is training data.
inline std::vector<Split> event_roles(const std::vector<Event>& events) {
  std::vector<Split> roles(events.size(), Split::train);
  std::size_t i = 0;
  while (i < events.size()) {
    std::size_t j = i;
    while (j < events.size() && events[j].user == events[i].user) ++j;
    if (j - i >= 3) {
      roles[j - 1] = Split::test;
      roles[j - 2] = Split::valid;
    }
    i = j;
  }
  return roles;
}

inline std::uint32_t distance_feature(const Event& e) {
  const double km = spherical_distance(geohash6_centroid(e.user_geohash6), geohash6_centroid(e.shop_geohash6));
  return bucketize_distance(km) + 1;
}

/// Builds training pairs for every prefix whose target lies in the training
/// region plus one validation and one test sample per eligible user.
/// Events must be grouped by user and chronological within a user.
inline std::vector<Sequence> build_sequences(const std::vector<Event>& events, const Vocab& vocab,
                                             const SequenceConfig& cfg, SequenceReport* report = nullptr) {
  if (cfg.n == 0) throw std::invalid_argument("build_sequences: n must be positive");
  SequenceReport rep;
  std::vector<Sequence> out;
  std::size_t i = 0;
  while (i < events.size()) {
    std::size_t j = i;
    while (j < events.size() && events[j].user == events[i].user) {
      if (j > i && events[j].timestamp < events[j - 1].timestamp)
        throw ConsistencyError("build_sequences: events for a user are not chronological");
      if (events[j].takeaway == 0 || events[j].takeaway > vocab.takeaways.size())
        throw ConsistencyError("build_sequences: event references unregistered takeaway");
      ++j;
    }
    if (j > i && i > 0 && events[i].user < events[i - 1].user)
      throw ConsistencyError("build_sequences: events are not grouped by ascending user");
    const std::size_t count = j - i;
    if (count < 2) {
      rep.users_skipped += 1;
      i = j;
      continue;
    }
    std::vector<std::uint32_t> items, regions, dists;
    for (std::size_t k = i; k < j; ++k) {
      items.push_back(events[k].takeaway);
      regions.push_back(events[k].region);
      dists.push_back(distance_feature(events[k]));
    }
    auto make = [&](std::size_t target_pos, Split split) {
      Sequence s;
      s.user = events[i].user;
      s.target = items[target_pos];
      s.split = split;
      s.items.assign(cfg.n, 0);
      s.regions.assign(cfg.n, 0);
      s.distances.assign(cfg.n, 0);
      const std::size_t take = std::min(target_pos, cfg.n);
      for (std::size_t q = 0; q < take; ++q) {
        const std::size_t src = target_pos - take + q;
        const std::size_t dst = cfg.n - take + q;
        s.items[dst] = items[src];
        s.regions[dst] = regions[src];
        s.distances[dst] = dists[src];
      }
      return s;
    };
    // Training targets are positions 1 .. count-3 (or 1 when only two events).
    const std::size_t last_train_target = count >= 3 ? count - 3 : 1;
    std::size_t first_train_target = 1;
    if (cfg.train_cap_per_user > 0 && last_train_target >= 1 &&
        last_train_target + 1 - first_train_target > cfg.train_cap_per_user)
      first_train_target = last_train_target + 1 - cfg.train_cap_per_user;
    for (std::size_t t = first_train_target; t <= last_train_target && t < count; ++t) {
      out.push_back(make(t, Split::train));
      rep.train += 1;
    }
    if (count >= 3) {
      out.push_back(make(count - 2, Split::valid));
      out.push_back(make(count - 1, Split::test));
      rep.valid += 1;
      rep.test += 1;
    } else {
      rep.users_train_only += 1;
    }
    i = j;
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].id = static_cast<std::uint32_t>(k);
  if (report) *report = rep;
  return out;
}

/// Everything the training stages need, persisted as one versioned file.
struct Dataset {
  Vocab vocab;
  std::vector<Event> events;
  std::vector<Sequence> sequences;
  SequenceConfig config;
  IngestReport ingest;
  SequenceReport build;

  std::vector<const Sequence*> split(Split s) const {
    std::vector<const Sequence*> out;
    for (auto& q : sequences)
      if (q.split == s) out.push_back(&q);
    return out;
  }

  /// Takeaways each user purchased anywhere in the log, sorted.
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> purchased_by_user() const {
    std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> out;
    for (auto& e : events) out[e.user].push_back(e.takeaway);
    for (auto& [u, v] : out) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
    return out;
  }

  std::size_t num_takeaways() const { return vocab.takeaways.size(); }
  std::size_t num_regions() const { return vocab.regions.size(); }
};

inline Dataset prepare_dataset(IngestResult ingested, const SequenceConfig& cfg) {
  Dataset ds;
  ds.vocab = std::move(ingested.vocab);
  ds.events = std::move(ingested.events);
  ds.ingest = ingested.report;
  ds.config = cfg;
  ds.sequences = build_sequences(ds.events, ds.vocab, cfg, &ds.build);
  return ds;
}

inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void write_registry(BinaryWriter& w, const Registry& r) {
  w.u64(r.keys().size());
  for (auto& k : r.keys()) w.str(k);
}

inline Registry read_registry(BinaryReader& rd) {
  Registry r;
  const auto n = rd.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    auto key = rd.str();
    if (i == 0) continue;
    if (r.intern(key) != i) throw IoError("dataset cache has a duplicate registry key");
  }
  return r;
}

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
  BinaryWriter w(path);
  w.header("STKDDATA", kDatasetVersion);
  w.u64(ds.vocab.hash());
  w.u64(ds.config.n);
  w.u64(ds.config.train_cap_per_user);
  detail::write_registry(w, ds.vocab.users);
  detail::write_registry(w, ds.vocab.takeaways);
  detail::write_registry(w, ds.vocab.regions);
  w.u64(ds.vocab.attributes.size());
  for (auto& [name, reg] : ds.vocab.attributes) {
    w.str(name);
    detail::write_registry(w, reg);
  }
  w.pod(ds.ingest);
  w.pod(ds.build);
  w.u64(ds.events.size());
  for (auto& e : ds.events) {
    w.u32(e.user);
    w.u32(e.takeaway);
    w.pod(e.timestamp);
    w.u32(e.region);
    w.str(e.user_geohash6);
    w.str(e.shop_geohash6);
    w.u64(e.attributes.size());
    for (auto& [name, id] : e.attributes) {
      w.str(name);
      w.u32(id);
    }
  }
  w.u64(ds.sequences.size());
  for (auto& s : ds.sequences) {
    w.u32(s.id);
    w.u32(s.user);
    w.u32(s.target);
    w.pod(static_cast<std::uint8_t>(s.split));
    w.vec(s.items);
    w.vec(s.regions);
    w.vec(s.distances);
  }
  w.close();
}

inline Dataset load_dataset(const std::string& path) {
  BinaryReader rd(path);
  rd.header("STKDDATA", kDatasetVersion);
  Dataset ds;
  const auto stored_hash = rd.u64();
  ds.config.n = rd.u64();
  ds.config.train_cap_per_user = rd.u64();
  ds.vocab.users = detail::read_registry(rd);
  ds.vocab.takeaways = detail::read_registry(rd);
  ds.vocab.regions = detail::read_registry(rd);
  const auto n_attr = rd.u64();
  for (std::uint64_t i = 0; i < n_attr; ++i) {
    auto name = rd.str();
    ds.vocab.attributes.emplace(std::move(name), detail::read_registry(rd));
  }
  if (ds.vocab.hash() != stored_hash) throw IoError("dataset cache '" + path + "' failed its vocab hash check");
  ds.ingest = rd.pod<IngestReport>();
  ds.build = rd.pod<SequenceReport>();
  ds.events.resize(rd.u64());
  for (auto& e : ds.events) {
    e.user = rd.u32();
    e.takeaway = rd.u32();
    e.timestamp = rd.pod<std::int64_t>();
    e.region = rd.u32();
    e.user_geohash6 = rd.str();
    e.shop_geohash6 = rd.str();
    const auto na = rd.u64();
    for (std::uint64_t k = 0; k < na; ++k) {
      auto name = rd.str();
      e.attributes.emplace_back(std::move(name), rd.u32());
    }
  }
  ds.sequences.resize(rd.u64());
  for (auto& s : ds.sequences) {
    s.id = rd.u32();
    s.user = rd.u32();
    s.target = rd.u32();
    s.split = static_cast<Split>(rd.pod<std::uint8_t>());
    s.items = rd.vec<std::uint32_t>();
    s.regions = rd.vec<std::uint32_t>();
    s.distances = rd.vec<std::uint32_t>();
  }
  return ds;
}

}  // namespace stkd::data
