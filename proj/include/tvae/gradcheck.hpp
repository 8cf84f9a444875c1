#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tvae/tensor.hpp"

namespace tvae {

// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
// amplifying finite-difference round-off.
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct GradCheckOptions {
  double step = 1e-5;
  // Lower bound of the relative-error denominator; raised to the
  // finite-difference round-off level of the loss when that is larger.
  double floor = 1e-6;
  // Skip coordinates whose central differences at step and step/2 disagree,
  // i.e. a kink (ReLU, clamp) lies inside the probe interval.
  bool kink_guard = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool finite = true;
};

// Compares the tape gradient of loss() w.r.t. each input against central
// differences. loss() must rebuild its graph from the inputs on every call.
GradCheckResult grad_check(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options = {});

struct SuiteEntry {
  std::string name;
  std::size_t instances = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// scope: "ops", "layers" or "models".
std::vector<SuiteEntry> gradcheck_suite(std::string_view scope, std::size_t instances = 10,
                                        std::uint64_t seed = 0);
std::string format_suite(const std::vector<SuiteEntry>& entries);

}  // namespace tvae
