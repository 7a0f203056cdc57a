#pragma once

// Parameter-set serialization shared by the teacher and student checkpoints.
// Values are always stored as f64 so a checkpoint written in one precision
// can be read into the other.

#include <cstdint>
#include <string>
#include <vector>

#include "stkd/binary_io.hpp"
#include "stkd/errors.hpp"
#include "stkd/numerics/params.hpp"

namespace stkd {

template <class T>
void write_params(BinaryWriter& w, const num::ParamSet<T>& ps) {
  w.u64(ps.size());
  for (auto& p : ps.items()) {
    w.str(p.name);
    std::vector<std::uint64_t> shape(p.var.shape().begin(), p.var.shape().end());
    w.vec(shape);
    w.pod(static_cast<std::uint8_t>(p.frozen));
    std::vector<double> values(p.var.value().values().begin(), p.var.value().values().end());
    w.vec(values);
  }
}

/// Reads values into an already-constructed parameter set; names, order and
/// shapes must match exactly.
template <class T>
void read_params(BinaryReader& r, num::ParamSet<T>& ps, const std::string& path) {
  if (r.u64() != ps.size()) throw IoError("checkpoint '" + path + "' has a different parameter count");
  for (auto& p : ps.items()) {
    const auto name = r.str();
    if (name != p.name) throw IoError("checkpoint '" + path + "': expected parameter '" + p.name + "', found '" + name + "'");
    const auto shape = r.vec<std::uint64_t>();
    if (std::vector<std::uint64_t>(p.var.shape().begin(), p.var.shape().end()) != shape)
      throw IoError("checkpoint '" + path + "': shape mismatch for '" + name + "'");
    p.frozen = r.pod<std::uint8_t>() != 0;
    const auto values = r.vec<double>();
    auto dst = p.var.mutable_value().values();
    if (values.size() != dst.size()) throw IoError("checkpoint '" + path + "': value count mismatch for '" + name + "'");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i]);
  }
}

}  // namespace stkd
