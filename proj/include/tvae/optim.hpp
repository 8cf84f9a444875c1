#pragma once

#include <cstddef>
#include <vector>

#include "tvae/layers.hpp"

namespace tvae {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over every parameter of a store, in registration order.
class Adam {
 public:
  explicit Adam(const ParamStore& store, AdamConfig config = {});

  // One update with learning rate lr. Throws NumericError naming the
  // parameter and step when a gradient is not finite; no parameter is
  // modified in that case.
  void step(ParamStore& store, double lr);

  std::size_t steps() const { return t_; }
  void set_steps(std::size_t t) { t_ = t; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

// Exponential staircase: base_lr * decay^floor(step / decay_every).
double lr_at(std::size_t step, double base_lr, double decay = 0.98, std::size_t decay_every = 1000);

// Linear KL-term annealing from 0 to 1 over total_steps.
struct AnnealSchedule {
  std::size_t total_steps = 1;
};

double kl_weight_at(std::size_t step, const AnnealSchedule& schedule);

}  // namespace tvae
