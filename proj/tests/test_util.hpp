#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tvae/rng.hpp"
#include "tvae/tensor.hpp"

namespace tvae::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

inline Tensor param(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

// Gradient of a scalar function of the inputs via the tape.
inline std::vector<std::vector<double>> tape_grads(const std::function<Tensor()>& f,
                                                   const std::vector<Tensor>& inputs) {
  for (auto t : inputs) t.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    backward(f());
  }
  std::vector<std::vector<double>> out;
  for (const auto& t : inputs) {
    auto g = t.grad();
    out.emplace_back(g.begin(), g.end());
    if (out.back().empty()) out.back().assign(t.numel(), 0.0);
  }
  return out;
}

// Central differences, evaluated without any tape.
inline std::vector<std::vector<double>> numeric_grads(const std::function<Tensor()>& f,
                                                      const std::vector<Tensor>& inputs,
                                                      double h = 1e-5) {
  std::vector<std::vector<double>> out;
  for (auto t : inputs) {
    auto v = t.values();
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = f().item();
      v[i] = keep - h;
      const double down = f().item();
      v[i] = keep;
      g[i] = (up - down) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline double max_rel_diff(const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      worst = std::max(worst, std::abs(a[i][j] - b[i][j]) /
                                  std::max({std::abs(a[i][j]), std::abs(b[i][j]), floor}));
  return worst;
}

inline std::vector<double> to_vec(const Tensor& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

}  // namespace tvae::testing
