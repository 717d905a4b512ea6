#include "tclt/rng.hpp"

#include <boost/version.hpp>

#include <random>

namespace tclt {

Engine make_stream(std::uint64_t seed, std::uint64_t replica, StreamTag tag) {
  const auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  const auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(replica), hi(replica), static_cast<std::uint32_t>(tag)};
  return Engine(seq);
}

std::string rng_algorithm() {
  return "mt19937_64 seeded by std::seed_seq(seed, replica, stream); normals by ziggurat "
         "(boost " BOOST_LIB_VERSION ")";
}

}  // namespace tclt
