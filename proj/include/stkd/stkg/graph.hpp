#pragma once

// The spatial-temporal knowledge graph.
//
// Entity ids: 0 is PAD, 1..V are takeaways (so a takeaway's entity id equals
// its dataset id), V+1..V+U are users, and attribute values follow, grouped
// by attribute name in lexicographic order.
//
// Relation ids: 168 time relations (weekday * 24 + hour, UTC), then one per
// distance bucket, then one per attribute name.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "stkd/binary_io.hpp"
#include "stkd/data/events.hpp"
#include "stkd/data/geo.hpp"
#include "stkd/data/sequences.hpp"
#include "stkd/errors.hpp"

namespace stkd::stkg {

inline constexpr std::uint32_t kTimeRelations = 24 * 7;
inline constexpr std::uint32_t kDistanceRelations = static_cast<std::uint32_t>(data::kDistanceBuckets);

enum class EntityKind : std::uint8_t { pad = 0, takeaway = 1, user = 2, attribute = 3 };
enum class TripleFamily : std::uint8_t { time = 0, distance = 1, user_attribute = 2, takeaway_attribute = 3 };

struct Triple {
  std::uint32_t head = 0;
  std::uint32_t relation = 0;
  std::uint32_t tail = 0;
  auto operator<=>(const Triple&) const = default;
};

struct Neighbor {
  std::uint32_t relation = 0;
  std::uint32_t entity = 0;
};

/// Hour-of-day x weekday relation of a Unix timestamp (UTC).
inline std::uint32_t time_relation(std::int64_t timestamp) {
  const std::int64_t day = timestamp >= 0 ? timestamp / 86400 : (timestamp - 86399) / 86400;
  const std::int64_t secs = timestamp - day * 86400;
  const auto hour = static_cast<std::uint32_t>(secs / 3600);
  const auto weekday = static_cast<std::uint32_t>(((day + 4) % 7 + 7) % 7);  // 1970-01-01 was a Thursday
  return weekday * 24 + hour;
}

class Stkg {
 public:
  std::size_t num_takeaways = 0;
  std::size_t num_users = 0;
  std::vector<std::string> attribute_names;        // sorted
  std::vector<std::uint32_t> attribute_base;       // first entity id per attribute name
  std::vector<std::uint32_t> attribute_count;      // values per attribute name
  std::vector<std::string> entity_keys;            // index = entity id
  std::vector<EntityKind> entity_kinds;
  std::vector<std::string> relation_keys;          // index = relation id
  std::vector<Triple> triples;                     // deduplicated, sorted
  std::vector<TripleFamily> triple_families;       // parallel to triples
  std::vector<std::uint64_t> offsets;              // CSR, size num_entities()+1
  std::vector<Neighbor> adjacency;                 // both directions of every triple
  std::uint64_t vocab_hash = 0;

  std::size_t num_entities() const { return entity_keys.size(); }  // includes PAD
  std::size_t num_relations() const { return relation_keys.size(); }

  std::uint32_t user_entity(std::uint32_t user) const {
    if (user == 0 || user > num_users) throw ConsistencyError("stkg: unregistered user id " + std::to_string(user));
    return static_cast<std::uint32_t>(num_takeaways + user);
  }
  std::uint32_t takeaway_entity(std::uint32_t takeaway) const {
    if (takeaway == 0 || takeaway > num_takeaways)
      throw ConsistencyError("stkg: unregistered takeaway id " + std::to_string(takeaway));
    return takeaway;
  }
  std::uint32_t attribute_index(const std::string& name) const {
    const auto it = std::lower_bound(attribute_names.begin(), attribute_names.end(), name);
    if (it == attribute_names.end() || *it != name) throw ConsistencyError("stkg: unknown attribute '" + name + "'");
    return static_cast<std::uint32_t>(it - attribute_names.begin());
  }
  std::uint32_t attribute_entity(const std::string& name, std::uint32_t value) const {
    const auto a = attribute_index(name);
    if (value == 0 || value > attribute_count[a])
      throw ConsistencyError("stkg: unregistered value id " + std::to_string(value) + " for attribute '" + name + "'");
    return attribute_base[a] + value - 1;
  }
  std::uint32_t distance_relation(std::uint32_t bucket) const { return kTimeRelations + bucket; }
  std::uint32_t attribute_relation(const std::string& name) const {
    return kTimeRelations + kDistanceRelations + attribute_index(name);
  }

  std::size_t degree(std::uint32_t entity) const { return offsets[entity + 1] - offsets[entity]; }
  std::span<const Neighbor> neighbors(std::uint32_t entity) const {
    return {adjacency.data() + offsets[entity], degree(entity)};
  }
  bool has_edge(std::uint32_t from, std::uint32_t relation, std::uint32_t to) const {
    const auto nb = neighbors(from);
    return std::binary_search(nb.begin(), nb.end(), Neighbor{relation, to}, [](const Neighbor& a, const Neighbor& b) {
      return std::tie(a.entity, a.relation) < std::tie(b.entity, b.relation);
    });
  }
};

namespace detail {

inline void finalize_adjacency(Stkg& g) {
  const std::size_t n = g.num_entities();
  std::vector<std::uint64_t> deg(n, 0);
  for (auto& t : g.triples) {
    deg[t.head] += 1;
    deg[t.tail] += 1;
  }
  g.offsets.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) g.offsets[i + 1] = g.offsets[i] + deg[i];
  g.adjacency.assign(g.offsets[n], {});
  std::vector<std::uint64_t> fill(g.offsets.begin(), g.offsets.end() - 1);
  for (auto& t : g.triples) {
    g.adjacency[fill[t.head]++] = {t.relation, t.tail};
    g.adjacency[fill[t.tail]++] = {t.relation, t.head};
  }
  for (std::size_t i = 0; i < n; ++i)
    std::sort(g.adjacency.begin() + static_cast<std::ptrdiff_t>(g.offsets[i]),
              g.adjacency.begin() + static_cast<std::ptrdiff_t>(g.offsets[i + 1]),
              [](const Neighbor& a, const Neighbor& b) {
                return std::tie(a.entity, a.relation) < std::tie(b.entity, b.relation);
              });
}

}  // namespace detail

/// Builds the graph. User-takeaway triples come only from training-role
/// purchases (everything except each user's validation and test targets);
/// attribute triples come from every event since they describe the entities,
/// not the purchase.
inline Stkg build_stkg(const std::vector<data::Event>& events, const data::Vocab& vocab) {
  Stkg g;
  g.num_takeaways = vocab.takeaways.size();
  g.num_users = vocab.users.size();
  g.vocab_hash = vocab.hash();

  g.entity_keys.push_back("<pad>");
  g.entity_kinds.push_back(EntityKind::pad);
  for (std::size_t t = 1; t <= g.num_takeaways; ++t) {
    g.entity_keys.push_back("t:" + vocab.takeaways.key(static_cast<std::uint32_t>(t)));
    g.entity_kinds.push_back(EntityKind::takeaway);
  }
  for (std::size_t u = 1; u <= g.num_users; ++u) {
    g.entity_keys.push_back("u:" + vocab.users.key(static_cast<std::uint32_t>(u)));
    g.entity_kinds.push_back(EntityKind::user);
  }
  for (auto& [name, reg] : vocab.attributes) {
    g.attribute_names.push_back(name);
    g.attribute_base.push_back(static_cast<std::uint32_t>(g.entity_keys.size()));
    g.attribute_count.push_back(static_cast<std::uint32_t>(reg.size()));
    for (std::size_t v = 1; v <= reg.size(); ++v) {
      g.entity_keys.push_back("a:" + name + "=" + reg.key(static_cast<std::uint32_t>(v)));
      g.entity_kinds.push_back(EntityKind::attribute);
    }
  }

  for (std::uint32_t r = 0; r < kTimeRelations; ++r)
    g.relation_keys.push_back("time:d" + std::to_string(r / 24) + "h" + std::to_string(r % 24));
  for (std::uint32_t b = 0; b < kDistanceRelations; ++b) g.relation_keys.push_back("dist:" + std::to_string(b));
  for (auto& name : g.attribute_names) g.relation_keys.push_back("attr:" + name);

  const auto roles = data::event_roles(events);
  std::map<Triple, TripleFamily> found;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const auto u = g.user_entity(e.user);
    const auto v = g.takeaway_entity(e.takeaway);
    if (roles[i] == data::Split::train) {
      found.emplace(Triple{u, time_relation(e.timestamp), v}, TripleFamily::time);
      found.emplace(Triple{u, g.distance_relation(data::distance_feature(e) - 1), v}, TripleFamily::distance);
    }
    for (auto& [name, value] : e.attributes) {
      const auto a = g.attribute_entity(name, value);
      const auto rel = g.attribute_relation(name);
      if (data::is_user_attribute(name))
        found.emplace(Triple{u, rel, a}, TripleFamily::user_attribute);
      else
        found.emplace(Triple{v, rel, a}, TripleFamily::takeaway_attribute);
    }
  }
  for (auto& [t, fam] : found) {
    g.triples.push_back(t);
    g.triple_families.push_back(fam);
  }
  detail::finalize_adjacency(g);
  return g;
}

inline Stkg build_stkg(const data::Dataset& ds) { return build_stkg(ds.events, ds.vocab); }

/// Counts mirroring a dataset-statistics table plus a log2 degree histogram
/// (bin 0 holds degree 0, bin k holds degrees in [2^(k-1), 2^k)).
inline nlohmann::json graph_stats(const Stkg& g) {
  std::size_t users = 0, takeaways = 0, attributes = 0;
  for (auto k : g.entity_kinds) {
    users += k == EntityKind::user;
    takeaways += k == EntityKind::takeaway;
    attributes += k == EntityKind::attribute;
  }
  std::array<std::size_t, 4> fam{};
  std::vector<std::uint8_t> used(g.num_relations(), 0);
  for (std::size_t i = 0; i < g.triples.size(); ++i) {
    fam[static_cast<std::size_t>(g.triple_families[i])] += 1;
    used[g.triples[i].relation] = 1;
  }
  std::vector<std::size_t> hist;
  for (std::uint32_t e = 1; e < g.num_entities(); ++e) {
    std::size_t d = g.degree(e), bin = 0;
    while (d > 0) {
      ++bin;
      d >>= 1;
    }
    if (hist.size() <= bin) hist.resize(bin + 1, 0);
    hist[bin] += 1;
  }
  return {
      {"entities", users + takeaways + attributes},
      {"users", users},
      {"takeaways", takeaways},
      {"attribute_values", attributes},
      {"relations", static_cast<std::size_t>(std::count(used.begin(), used.end(), 1))},
      {"relation_vocabulary", g.triples.empty() ? 0 : g.num_relations()},
      {"triples", g.triples.size()},
      {"triples_by_family",
       {{"time", fam[0]}, {"distance", fam[1]}, {"user_attribute", fam[2]}, {"takeaway_attribute", fam[3]}}},
      {"degree_histogram_log2", hist},
  };
}

inline constexpr std::uint32_t kGraphVersion = 1;

inline void save_stkg(const Stkg& g, const std::string& path) {
  BinaryWriter w(path);
  w.header("STKDGRPH", kGraphVersion);
  w.u64(g.vocab_hash);
  w.u64(g.num_takeaways);
  w.u64(g.num_users);
  w.u64(kTimeRelations);
  const auto edges = data::distance_bucket_edges();
  w.vec(std::vector<double>(edges.begin(), edges.end()));
  w.u64(g.attribute_names.size());
  for (auto& s : g.attribute_names) w.str(s);
  w.vec(g.attribute_base);
  w.vec(g.attribute_count);
  w.u64(g.entity_keys.size());
  for (auto& s : g.entity_keys) w.str(s);
  w.vec(g.entity_kinds);
  w.u64(g.relation_keys.size());
  for (auto& s : g.relation_keys) w.str(s);
  w.vec(g.triples);
  w.vec(g.triple_families);
  w.vec(g.offsets);
  w.vec(g.adjacency);
  w.close();
}

inline Stkg load_stkg(const std::string& path) {
  BinaryReader r(path);
  r.header("STKDGRPH", kGraphVersion);
  Stkg g;
  g.vocab_hash = r.u64();
  g.num_takeaways = r.u64();
  g.num_users = r.u64();
  const auto edges = data::distance_bucket_edges();
  if (r.u64() != kTimeRelations || r.vec<double>() != std::vector<double>(edges.begin(), edges.end()))
    throw IoError("graph file '" + path + "' uses a different bucket table");
  g.attribute_names.resize(r.u64());
  for (auto& s : g.attribute_names) s = r.str();
  g.attribute_base = r.vec<std::uint32_t>();
  g.attribute_count = r.vec<std::uint32_t>();
  g.entity_keys.resize(r.u64());
  for (auto& s : g.entity_keys) s = r.str();
  g.entity_kinds = r.vec<EntityKind>();
  g.relation_keys.resize(r.u64());
  for (auto& s : g.relation_keys) s = r.str();
  g.triples = r.vec<Triple>();
  g.triple_families = r.vec<TripleFamily>();
  g.offsets = r.vec<std::uint64_t>();
  g.adjacency = r.vec<Neighbor>();
  if (g.entity_kinds.size() != g.entity_keys.size() || g.offsets.size() != g.entity_keys.size() + 1 ||
      g.offsets.back() != g.adjacency.size() || g.triple_families.size() != g.triples.size())
    throw IoError("graph file '" + path + "' is inconsistent");
  for (auto& nb : g.adjacency)
    if (nb.entity >= g.num_entities() || nb.relation >= g.num_relations())
      throw IoError("graph file '" + path + "' references an unknown id");
  return g;
}

}  // namespace stkd::stkg
