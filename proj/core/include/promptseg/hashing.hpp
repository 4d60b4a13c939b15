#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace promptseg {

// 64-bit FNV-1a. Stable across platforms; used for checksums and config hashes.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  template <typename T>
  void update_values(std::span<const T> values) {
    update(std::as_bytes(values));
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 14695981039346656037ull;
};

std::string to_hex(std::uint64_t value);

}  // namespace promptseg
