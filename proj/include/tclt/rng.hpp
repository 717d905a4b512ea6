#pragma once

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cstdint>
#include <string>

namespace tclt {

using Engine = boost::random::mt19937_64;

/// Stream tags: each replica owns one independent stream per purpose.
enum class StreamTag : std::uint32_t {
  initial = 0,
  dynamics = 1,
  noise = 2,
  statistics = 3,
};

/// Engine seeded from (seed, replica, tag) through std::seed_seq. Streams are derived, never
/// obtained by advancing a shared generator.
Engine make_stream(std::uint64_t seed, std::uint64_t replica, StreamTag tag);

/// Algorithm tag recorded in run metadata.
std::string rng_algorithm();

class Normal {
 public:
  explicit Normal(Engine eng) : eng_(std::move(eng)) {}
  double operator()() { return dist_(eng_); }
  Engine& engine() { return eng_; }

 private:
  Engine eng_;
  boost::random::normal_distribution<double> dist_;
};

/// Uniform on [0, 1).
inline double uniform01(Engine& e) { return boost::random::uniform_01<double>{}(e); }

}  // namespace tclt
