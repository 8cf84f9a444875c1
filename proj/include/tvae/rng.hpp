#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace tvae {

// Seeded generator whose full state round-trips through a string, so a
// training run can be resumed bit-exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  // Standard normal via Box-Muller; no cached second variate.
  double normal();
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace tvae
