#include "tvae/optim.hpp"

#include <algorithm>
#include <cmath>

#include "tvae/errors.hpp"

namespace tvae {

Adam::Adam(const ParamStore& store, AdamConfig config) : config_(config) {
  for (const auto& [name, p] : store.params()) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(ParamStore& store, double lr) {
  auto& params = store.params();
  if (params.size() != m_.size()) throw ContractError("Adam: parameter set changed since construction");
  if (!(lr > 0.0)) throw ContractError("Adam: learning rate must be positive");
  for (const auto& [name, p] : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + name + "' at step " +
                           std::to_string(t_ + 1));
      }
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto g = p.grad();
    if (g.empty()) continue;  // never reached by the loss; moments stay put
    auto w = p.values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  double total = 0.0;
  for (const auto& [name, p] : store.params()) {
    for (double g : p.grad()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& [name, p] : store.params()) {
      Tensor t = p;
      if (!t.has_grad()) continue;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

double lr_at(std::size_t step, double base_lr, double decay, std::size_t decay_every) {
  if (decay_every == 0) return base_lr;
  return base_lr * std::pow(decay, static_cast<double>(step / decay_every));
}

double kl_weight_at(std::size_t step, const AnnealSchedule& schedule) {
  if (schedule.total_steps == 0) throw ContractError("annealing horizon must be positive");
  return std::clamp(static_cast<double>(step) / static_cast<double>(schedule.total_steps), 0.0, 1.0);
}

}  // namespace tvae
