#pragma once

// Little-endian binary streams for the versioned artifact files (dataset
// cache, graph, checkpoints). Every file starts with an 8-byte magic and a
// u32 format version.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "stkd/errors.hpp"

namespace stkd {

static_assert(std::endian::native == std::endian::little, "artifact files assume a little-endian host");

/// FNV-1a, used for vocab and config hashes.
class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }

  void header(std::string_view magic, std::uint32_t version) {
    std::array<char, 8> m{};
    std::memcpy(m.data(), magic.data(), std::min<std::size_t>(magic.size(), 8));
    raw(m.data(), m.size());
    pod(version);
  }

  template <class T>
    requires std::is_trivially_copyable_v<T>
  void pod(const T& v) {
    raw(&v, sizeof v);
  }

  void u32(std::uint32_t v) { pod(v); }
  void u64(std::uint64_t v) { pod(v); }

  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }

  template <class T>
    requires std::is_trivially_copyable_v<T>
  void vec(const std::vector<T>& v) {
    u64(v.size());
    if (!v.empty()) raw(v.data(), v.size() * sizeof(T));
  }

  void close() {
    out_.flush();
    if (!out_) throw IoError("write failed for '" + path_ + "'");
    out_.close();
  }

 private:
  void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open '" + path + "' for reading");
  }

  /// Checks magic and returns the stored version; throws if the magic differs
  /// or the version exceeds `max_version`.
  std::uint32_t header(std::string_view magic, std::uint32_t max_version) {
    std::array<char, 8> m{}, expected{};
    std::memcpy(expected.data(), magic.data(), std::min<std::size_t>(magic.size(), 8));
    raw(m.data(), m.size());
    if (m != expected) throw IoError("'" + path_ + "' is not a " + std::string(magic) + " file");
    const auto v = pod<std::uint32_t>();
    if (v == 0 || v > max_version)
      throw IoError("'" + path_ + "' has unsupported format version " + std::to_string(v));
    return v;
  }

  template <class T>
    requires std::is_trivially_copyable_v<T>
  T pod() {
    T v;
    raw(&v, sizeof v);
    return v;
  }

  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }

  std::string str() {
    const auto n = checked_count(u64(), 1);
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  template <class T>
    requires std::is_trivially_copyable_v<T>
  std::vector<T> vec() {
    const auto n = checked_count(u64(), sizeof(T));
    std::vector<T> v(n);
    if (n) raw(v.data(), n * sizeof(T));
    return v;
  }

 private:
  std::size_t checked_count(std::uint64_t n, std::size_t elem) {
    // Reject counts that cannot possibly fit in the rest of the file.
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    if (elem != 0 && n > static_cast<std::uint64_t>(end - here) / elem)
      throw IoError("'" + path_ + "' is truncated or corrupt");
    return static_cast<std::size_t>(n);
  }

  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw IoError("'" + path_ + "' is truncated");
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace stkd
