#include "promptseg/hashing.hpp"

#include <cstdio>

namespace promptseg {

void Fnv1a::update(std::span<const std::byte> bytes) {
  for (auto b : bytes) {
    state_ ^= static_cast<std::uint8_t>(b);
    state_ *= 1099511628211ull;
  }
}

void Fnv1a::update(std::string_view text) { update(std::as_bytes(std::span(text.data(), text.size()))); }

std::string Fnv1a::hex() const { return to_hex(state_); }

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace promptseg
