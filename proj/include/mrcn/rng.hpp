#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mrcn {

// Seedable random stream. All sampling is hand-rolled on top of the raw
// mt19937_64 output so sequences are identical across standard libraries;
// state round-trips through text for checkpoint resume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n), rejection sampled.
  std::uint64_t integer(std::uint64_t n);

  // Standard normal via Box-Muller.
  double gaussian();
  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream derived from this one's seed lineage.
  Rng fork(std::uint64_t salt);

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

 private:
  std::mt19937_64 gen_;
};

}  // namespace mrcn
