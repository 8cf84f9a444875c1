#include "tvae/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "tvae/errors.hpp"

namespace tvae {

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ContractError("Rng::index on empty range");
  return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  std::mt19937_64 engine;
  is >> engine;
  if (is.fail()) throw ContractError("malformed RNG state");
  engine_ = engine;
}

}  // namespace tvae
