#pragma once

// Purchase-event ingestion and vocabularies.
//
// Record format (UTF-8, one event per line, tab separated):
//
//   user_id  takeaway_id  timestamp  user_geohash6  shop_geohash6  [name=value ...]
//
// Attribute fields whose name starts with "u." describe the user; all other
// attributes describe the takeaway. Blank lines and lines starting with '#'
// are ignored.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stkd/binary_io.hpp"
#include "stkd/data/geo.hpp"
#include "stkd/errors.hpp"

namespace stkd::data {

struct PurchaseEvent {
  std::string user_id;
  std::string takeaway_id;
  std::int64_t timestamp = 0;
  std::string user_geohash6;
  std::string shop_geohash6;
  std::vector<std::pair<std::string, std::string>> attributes;
};

inline bool is_user_attribute(std::string_view name) { return name.starts_with("u."); }

/// Bijection between external string keys and dense ids 1..size(); id 0 is
/// reserved (PAD for takeaways/regions, unused for the others).
class Registry {
 public:
  Registry() : keys_{""} {}

  std::uint32_t intern(const std::string& key) {
    if (auto it = ids_.find(key); it != ids_.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(keys_.size());
    keys_.push_back(key);
    ids_.emplace(key, id);
    return id;
  }

  std::optional<std::uint32_t> find(const std::string& key) const {
    if (auto it = ids_.find(key); it != ids_.end()) return it->second;
    return std::nullopt;
  }

  const std::string& key(std::uint32_t id) const {
    if (id == 0 || id >= keys_.size()) throw std::out_of_range("registry id " + std::to_string(id) + " not assigned");
    return keys_[id];
  }

  /// Number of real entries (excluding the reserved id 0).
  std::size_t size() const { return keys_.size() - 1; }
  const std::vector<std::string>& keys() const { return keys_; }

  void hash_into(Fnv1a& h) const {
    h.u64(keys_.size());
    for (auto& k : keys_) h.str(k);
  }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Vocab {
  Registry users;
  Registry takeaways;
  Registry regions;  // shop geohash6 cells
  std::map<std::string, Registry> attributes;  // per attribute field name
  static constexpr std::size_t distance_buckets = kDistanceBuckets;

  std::uint64_t hash() const {
    Fnv1a h;
    users.hash_into(h);
    takeaways.hash_into(h);
    regions.hash_into(h);
    h.u64(attributes.size());
    for (auto& [name, reg] : attributes) {
      h.str(name);
      reg.hash_into(h);
    }
    h.u64(distance_buckets);
    return h.value();
  }
};

/// An ingested event with dense ids.
struct Event {
  std::uint32_t user = 0;
  std::uint32_t takeaway = 0;
  std::int64_t timestamp = 0;
  std::uint32_t region = 0;  // shop region id
  std::string user_geohash6;
  std::string shop_geohash6;
  // (attribute field name, value id in that field's registry)
  std::vector<std::pair<std::string, std::uint32_t>> attributes;
};

struct IngestReport {
  std::size_t lines = 0;       // non-blank, non-comment lines
  std::size_t malformed = 0;   // unparseable lines
  std::size_t dropped_geohash = 0;  // well-formed but empty/invalid geohash6
  std::size_t retained = 0;
};

struct IngestResult {
  std::vector<Event> events;  // grouped by user id, chronological within a user
  Vocab vocab;
  IngestReport report;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

inline std::optional<PurchaseEvent> parse_record(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto f = split_tabs(line);
  if (f.size() < 5 || f[0].empty() || f[1].empty()) return std::nullopt;
  PurchaseEvent ev;
  ev.user_id = f[0];
  ev.takeaway_id = f[1];
  const auto* end = f[2].data() + f[2].size();
  auto [p, ec] = std::from_chars(f[2].data(), end, ev.timestamp);
  if (ec != std::errc() || p != end || ev.timestamp <= 0) return std::nullopt;
  ev.user_geohash6 = f[3];
  ev.shop_geohash6 = f[4];
  for (std::size_t i = 5; i < f.size(); ++i) {
    if (f[i].empty()) continue;
    const auto eq = f[i].find('=');
    if (eq == std::string_view::npos || eq == 0) return std::nullopt;
    ev.attributes.emplace_back(std::string(f[i].substr(0, eq)), std::string(f[i].substr(eq + 1)));
  }
  return ev;
}

}  // namespace detail

inline std::string format_record(const PurchaseEvent& ev) {
  std::string s = ev.user_id + '\t' + ev.takeaway_id + '\t' + std::to_string(ev.timestamp) + '\t' +
                  ev.user_geohash6 + '\t' + ev.shop_geohash6;
  for (auto& [k, v] : ev.attributes) s += '\t' + k + '=' + v;
  return s;
}

/// Parses, cleans, and indexes an event stream. Events with an empty or
/// invalid geohash6 on either side are dropped. More than half of the lines
/// being malformed is a data-quality error.
inline IngestResult ingest_events(std::istream& in) {
  IngestResult res;
  std::vector<PurchaseEvent> kept;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view sv(line);
    if (sv.empty() || sv == "\r" || sv.front() == '#') continue;
    res.report.lines += 1;
    auto ev = detail::parse_record(sv);
    if (!ev) {
      res.report.malformed += 1;
      continue;
    }
    if (!is_valid_geohash6(ev->user_geohash6) || !is_valid_geohash6(ev->shop_geohash6)) {
      res.report.dropped_geohash += 1;
      continue;
    }
    kept.push_back(std::move(*ev));
  }
  if (in.bad()) throw IoError("read failure while ingesting events");
  if (res.report.lines > 0 && res.report.malformed * 2 > res.report.lines)
    throw DataQualityError("malformed records: " + std::to_string(res.report.malformed) + " of " +
                           std::to_string(res.report.lines) + " lines");

  res.events.reserve(kept.size());
  for (auto& pe : kept) {
    Event e;
    e.user = res.vocab.users.intern(pe.user_id);
    e.takeaway = res.vocab.takeaways.intern(pe.takeaway_id);
    e.region = res.vocab.regions.intern(pe.shop_geohash6);
    e.timestamp = pe.timestamp;
    e.user_geohash6 = std::move(pe.user_geohash6);
    e.shop_geohash6 = std::move(pe.shop_geohash6);
    for (auto& [name, value] : pe.attributes) {
      const auto id = res.vocab.attributes[name].intern(value);
      e.attributes.emplace_back(name, id);
    }
    res.events.push_back(std::move(e));
  }
  // stable_sort keeps input order among equal (user, timestamp).
  std::stable_sort(res.events.begin(), res.events.end(), [](const Event& a, const Event& b) {
    return a.user != b.user ? a.user < b.user : a.timestamp < b.timestamp;
  });
  res.report.retained = res.events.size();
  return res;
}

inline IngestResult ingest_events_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open event log '" + path + "'");
  return ingest_events(in);
}

}  // namespace stkd::data
