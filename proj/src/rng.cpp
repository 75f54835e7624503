#include "mrcn/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "mrcn/check.hpp"

namespace mrcn {

std::uint64_t Rng::integer(std::uint64_t n) {
  MRCN_CHECK(n > 0, "Rng::integer: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % n;
}

double Rng::gaussian() {
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t salt) {
  std::uint64_t mixed = gen_() ^ (salt * 0x9e3779b97f4a7c15ULL);
  return Rng(mixed);
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << gen_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  Rng r(0);
  std::istringstream is(state);
  is >> r.gen_;
  if (!is) throw IoError("Rng::deserialize: malformed state string");
  return r;
}

}  // namespace mrcn
