#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace symplex {

/// 64-bit FNV-1a, used for file identities and checkpoint checksums.
class Fnv1a64 {
 public:
  void update(std::span<const std::uint8_t> bytes) {
    for (auto b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) {
    update(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  Fnv1a64 h;
  h.update(bytes);
  return h.digest();
}

inline std::uint64_t fnv1a64(std::string_view s) {
  Fnv1a64 h;
  h.update(s);
  return h.digest();
}

inline std::string hexDigest(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace symplex
