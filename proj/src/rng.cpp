#include "aotpot/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace aotpot {

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng deserialize_rng(const std::string& text) {
  std::istringstream is(text);
  Rng rng;
  is >> rng;
  if (!is) throw std::runtime_error("rng: malformed generator state");
  return rng;
}

Tensor randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Tensor randu(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace aotpot
