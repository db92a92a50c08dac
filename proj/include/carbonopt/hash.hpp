#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace carbonopt {

/// 64-bit FNV-1a. Stable across platforms; used for chunk ids, prompt keys,
/// config hashes and evaluation-set fingerprints.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Fnv1a& update(double value) {
    unsigned char raw[sizeof(double)];
    std::memcpy(raw, &value, sizeof(double));
    return update(std::string_view(reinterpret_cast<const char*>(raw), sizeof(double)));
  }

  Fnv1a& update(std::uint64_t value) {
    unsigned char raw[sizeof(value)];
    for (std::size_t i = 0; i < sizeof(value); ++i) raw[i] = static_cast<unsigned char>(value >> (8 * i));
    return update(std::string_view(reinterpret_cast<const char*>(raw), sizeof(value)));
  }

  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string Fnv1a::hex() const {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) out[15 - i] = digits[(state_ >> (4 * i)) & 0xF];
  return out;
}

inline std::string fnv1a_hex(std::string_view bytes) { return Fnv1a{}.update(bytes).hex(); }

}  // namespace carbonopt
