#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "stkd/errors.hpp"

namespace stkd::data {

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

struct GeoBox {
  double lat_lo, lat_hi, lon_lo, lon_hi;
  LatLon center() const { return {(lat_lo + lat_hi) / 2.0, (lon_lo + lon_hi) / 2.0}; }
};

inline constexpr std::string_view kGeohashAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";

inline int geohash_digit(char c) {
  const auto pos = kGeohashAlphabet.find(c);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

inline bool is_valid_geohash6(std::string_view code) {
  if (code.size() != 6) return false;
  for (char c : code)
    if (geohash_digit(c) < 0) return false;
  return true;
}

/// Standard interleaved base-32 decode: bits alternate longitude, latitude,
/// starting with longitude.
inline GeoBox geohash_decode(std::string_view code) {
  if (code.empty()) throw ParseError("empty geohash", 0);
  GeoBox box{-90.0, 90.0, -180.0, 180.0};
  bool lon_bit = true;
  for (std::size_t i = 0; i < code.size(); ++i) {
    const int d = geohash_digit(code[i]);
    if (d < 0) throw ParseError("invalid geohash character '" + std::string(1, code[i]) + "'", i);
    for (int b = 4; b >= 0; --b) {
      const bool bit = (d >> b) & 1;
      if (lon_bit) {
        const double mid = (box.lon_lo + box.lon_hi) / 2.0;
        (bit ? box.lon_lo : box.lon_hi) = mid;
      } else {
        const double mid = (box.lat_lo + box.lat_hi) / 2.0;
        (bit ? box.lat_lo : box.lat_hi) = mid;
      }
      lon_bit = !lon_bit;
    }
  }
  return box;
}

inline std::string geohash_encode(LatLon p, std::size_t precision = 6) {
  if (p.lat < -90 || p.lat > 90 || p.lon < -180 || p.lon > 180)
    throw std::invalid_argument("geohash_encode: coordinate out of range");
  double lat_lo = -90, lat_hi = 90, lon_lo = -180, lon_hi = 180;
  std::string out;
  bool lon_bit = true;
  int bits = 0, digit = 0;
  while (out.size() < precision) {
    if (lon_bit) {
      const double mid = (lon_lo + lon_hi) / 2;
      if (p.lon >= mid) {
        digit = (digit << 1) | 1;
        lon_lo = mid;
      } else {
        digit <<= 1;
        lon_hi = mid;
      }
    } else {
      const double mid = (lat_lo + lat_hi) / 2;
      if (p.lat >= mid) {
        digit = (digit << 1) | 1;
        lat_lo = mid;
      } else {
        digit <<= 1;
        lat_hi = mid;
      }
    }
    lon_bit = !lon_bit;
    if (++bits == 5) {
      out.push_back(kGeohashAlphabet[digit]);
      bits = 0;
      digit = 0;
    }
  }
  return out;
}

/// Center of a 6-character geohash cell.
inline LatLon geohash6_centroid(std::string_view code) {
  if (code.size() != 6) throw ParseError("geohash6 must have 6 characters, got " + std::to_string(code.size()), 0);
  return geohash_decode(code).center();
}

inline constexpr double kEarthRadiusKm = 6371.0;

/// Haversine great-circle distance in kilometers.
inline double spherical_distance(LatLon a, LatLon b) {
  auto check = [](LatLon p) {
    if (!(p.lat >= -90 && p.lat <= 90 && p.lon >= -180 && p.lon <= 180))
      throw std::invalid_argument("spherical_distance: coordinate out of range");
  };
  check(a);
  check(b);
  constexpr double kRad = 3.14159265358979323846 / 180.0;
  const double dlat = (b.lat - a.lat) * kRad;
  const double dlon = (b.lon - a.lon) * kRad;
  const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

// Distance buckets: [0, 0.25), then doubling half-open intervals
// [0.25, 0.5), [0.5, 1), ..., [2048, 4096), and [4096, inf) as bucket 15.
inline constexpr std::size_t kDistanceBuckets = 16;

inline constexpr std::array<double, kDistanceBuckets - 1> distance_bucket_edges() {
  std::array<double, kDistanceBuckets - 1> e{};
  double v = 0.25;
  for (auto& x : e) {
    x = v;
    v *= 2.0;
  }
  return e;
}

inline std::uint32_t bucketize_distance(double km) {
  if (!(km >= 0.0)) throw std::invalid_argument("bucketize_distance: distance must be non-negative");
  std::uint32_t b = 0;
  for (double edge : distance_bucket_edges()) {
    if (km < edge) break;
    ++b;
  }
  return b;
}

}  // namespace stkd::data
