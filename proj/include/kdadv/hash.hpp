#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace kdadv {

// 64-bit FNV-1a. Stable across platforms and runs, unlike std::hash.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes) {
    for (auto b : bytes) {
      state_ ^= b;
      state_ *= kPrime;
    }
  }
  void update(std::string_view text) {
    update({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  static constexpr std::uint64_t kPrime = 1099511628211ULL;
  std::uint64_t state_ = 14695981039346656037ULL;
};

std::uint64_t fnv1a(std::string_view text);
std::string to_hex(std::uint64_t value);

}  // namespace kdadv
