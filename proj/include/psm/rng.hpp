#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace psm {

using Rng = std::mt19937_64;

/// FNV-1a, used to turn stream names into seed words.
constexpr std::uint64_t stream_tag(std::string_view name)
{
  std::uint64_t h = 1469598103934665603ull;
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

/// Independent engine for (master seed, named stream, a, b). Streams with
/// different names or indices do not share state.
inline Rng make_stream(std::uint64_t master, std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0)
{
  std::uint64_t const tag = stream_tag(name);
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(tag),    static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(a),      static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),      static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

/// A 64-bit seed derived from a named stream, for handing to sub-components.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name, std::uint64_t a = 0, std::uint64_t b = 0)
{
  Rng r = make_stream(master, name, a, b);
  return r();
}

} // namespace psm
