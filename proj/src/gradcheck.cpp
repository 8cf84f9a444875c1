#include "tvae/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "tvae/errors.hpp"
#include "tvae/layers.hpp"
#include "tvae/models.hpp"
#include "tvae/rng.hpp"

namespace tvae {

double relative_error(double analytic, double numeric, double floor) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) return INFINITY;
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<Tensor()>& loss, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& options) {
  GradCheckResult result;
  for (Tensor t : inputs) t.zero_grad();
  Tape tape;
  Tensor out;
  {
    TapeScope scope(tape);
    out = loss();
  }
  tape.backward(out);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& t : inputs) {
    const auto g = t.grad();
    analytic.emplace_back(g.empty() ? std::vector<double>(t.numel(), 0.0)
                                    : std::vector<double>(g.begin(), g.end()));
  }

  auto eval = [&] { return loss().item(); };
  const double h = options.step;
  // A summed loss carries tens of ulps of rounding, so central differences
  // cannot resolve slopes much below eps * |f| / h. The floor keeps that
  // noise about two orders under the tolerances used here.
  const double floor =
      std::max(options.floor, 1e4 * std::numeric_limits<double>::epsilon() *
                                  std::max(1.0, std::fabs(out.item())) / h);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i];
    auto v = t.values();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double x0 = v[j];
      auto central = [&](double step) {
        v[j] = x0 + step;
        const double up = eval();
        v[j] = x0 - step;
        const double down = eval();
        v[j] = x0;
        return (up - down) / (2.0 * step);
      };
      const double numeric = central(h);
      if (options.kink_guard) {
        // A kink inside the probe interval shows up as disagreeing one-sided
        // slopes, or as a central difference that moves with the step.
        const double f0 = eval();
        v[j] = x0 + h;
        const double forward = (eval() - f0) / h;
        v[j] = x0 - h;
        const double backward = (f0 - eval()) / h;
        v[j] = x0;
        const double half = central(h / 2.0);
        if (relative_error(forward, backward, 1e-3) > 1e-2 ||
            relative_error(numeric, half, options.floor) > 1e-3) {
          ++result.skipped;
          continue;
        }
      }
      const double err = relative_error(analytic[i][j], numeric, floor);
      if (!std::isfinite(err)) result.finite = false;
      result.max_rel_error = std::max(result.max_rel_error, std::isfinite(err) ? err : INFINITY);
      ++result.checked;
    }
  }
  return result;
}

namespace {

constexpr double kSmoothTol = 1e-5;
constexpr double kKinkTol = 1e-4;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

Tensor param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return random_tensor(std::move(shape), rng, lo, hi).set_requires_grad(true);
}

// Values whose magnitude is at least `gap`, so kinks at 0 stay out of reach.
Tensor param_away_from_zero(Shape shape, Rng& rng, double gap) {
  Tensor t = param(std::move(shape), rng);
  for (double& v : t.values()) v = (v < 0 ? -1.0 : 1.0) * (gap + std::fabs(v));
  return t;
}

// Fresh values for every parameter of a store; zero-initialized biases
// would otherwise park ReLU inputs exactly on the kink.
void randomize(const ParamStore& store, Rng& rng, double bound) {
  for (const auto& [name, p] : store.params()) {
    Tensor t = p;
    for (double& v : t.values()) v = bound * (2.0 * rng.uniform() - 1.0);
  }
}

std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

// Projects an output onto fixed random weights so every element matters.
Tensor project(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

struct Instance {
  std::function<Tensor()> loss;
  std::vector<Tensor> inputs;
  std::shared_ptr<void> keep_alive;
};

struct Case {
  std::string name;
  double tolerance;
  bool kink_guard;
  std::function<Instance(Rng&)> make;
};

Instance projected(std::function<Tensor()> f, std::vector<Tensor> inputs, Rng& rng) {
  Tensor probe;
  {
    Tensor sample = f();
    probe = random_tensor(sample.shape(), rng);
  }
  return {[f, probe] { return project(f(), probe); }, std::move(inputs), nullptr};
}

std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto smooth = [&](std::string name, std::function<Instance(Rng&)> make) {
    cases.push_back({std::move(name), kSmoothTol, false, std::move(make)});
  };
  smooth("add", [](Rng& r) {
    Shape s{dim_in(r, 1, 3), dim_in(r, 2, 4)};
    Tensor a = param(s, r), b = param(s, r);
    return projected([=] { return add(a, b); }, {a, b}, r);
  });
  smooth("add_broadcast", [](Rng& r) {
    const std::size_t d = dim_in(r, 2, 4);
    Tensor a = param({dim_in(r, 1, 3), dim_in(r, 2, 3), d}, r), b = param({d}, r);
    return projected([=] { return add(a, b); }, {a, b}, r);
  });
  smooth("sub", [](Rng& r) {
    Shape s{dim_in(r, 2, 4), dim_in(r, 2, 4)};
    Tensor a = param(s, r), b = param({s[1]}, r);
    return projected([=] { return sub(a, b); }, {a, b}, r);
  });
  smooth("mul", [](Rng& r) {
    Shape s{dim_in(r, 2, 4), dim_in(r, 2, 4)};
    Tensor a = param(s, r), b = param(s, r);
    return projected([=] { return mul(a, b); }, {a, b}, r);
  });
  smooth("mul_broadcast", [](Rng& r) {
    Shape s{dim_in(r, 2, 4), dim_in(r, 2, 4)};
    Tensor a = param(s, r), b = param({s[1]}, r);
    return projected([=] { return mul(a, b); }, {a, b}, r);
  });
  smooth("scale", [](Rng& r) {
    Tensor a = param({dim_in(r, 2, 5)}, r);
    const double f = r.uniform() * 4 - 2;
    return projected([=] { return scale(a, f); }, {a}, r);
  });
  smooth("add_scalar", [](Rng& r) {
    Tensor a = param({dim_in(r, 2, 5)}, r);
    return projected([=] { return add_scalar(a, 0.7); }, {a}, r);
  });
  smooth("matmul", [](Rng& r) {
    const std::size_t m = dim_in(r, 1, 4), k = dim_in(r, 1, 4), n = dim_in(r, 1, 4);
    Tensor a = param({m, k}, r), b = param({k, n}, r);
    return projected([=] { return matmul(a, b); }, {a, b}, r);
  });
  smooth("concat", [](Rng& r) {
    const std::size_t axis = r.index(2);
    Shape sa{3, 2}, sb{3, 2};
    (axis == 0 ? sb[0] : sb[1]) = dim_in(r, 1, 3);
    Tensor a = param(sa, r), b = param(sb, r);
    return projected([=] { return concat({a, b}, axis); }, {a, b}, r);
  });
  smooth("slice", [](Rng& r) {
    Tensor a = param({3, dim_in(r, 3, 6)}, r);
    const std::size_t begin = r.index(2);
    return projected([=] { return slice(a, 1, begin, a.dim(1) - 1); }, {a}, r);
  });
  smooth("reshape", [](Rng& r) {
    Tensor a = param({2, 3, 2}, r);
    return projected([=] { return reshape(a, {3, 4}); }, {a}, r);
  });
  smooth("transpose", [](Rng& r) {
    Tensor a = param({2, 3, dim_in(r, 2, 4)}, r);
    std::vector<std::size_t> perm{0, 1, 2};
    for (std::size_t i = 2; i > 0; --i) std::swap(perm[i], perm[r.index(i + 1)]);
    return projected([=] { return transpose(a, perm); }, {a}, r);
  });
  cases.push_back({"relu", kKinkTol, false, [](Rng& r) {
                     // |x| >= 10 * step keeps every probe on one side of 0.
                     Tensor a = param_away_from_zero({dim_in(r, 3, 8)}, r, 1e-3);
                     return projected([=] { return relu(a); }, {a}, r);
                   }});
  smooth("sigmoid", [](Rng& r) {
    Tensor a = param({dim_in(r, 3, 8)}, r, -3, 3);
    return projected([=] { return sigmoid(a); }, {a}, r);
  });
  smooth("tanh", [](Rng& r) {
    Tensor a = param({dim_in(r, 3, 8)}, r, -2, 2);
    return projected([=] { return tanh(a); }, {a}, r);
  });
  smooth("exp", [](Rng& r) {
    Tensor a = param({dim_in(r, 3, 8)}, r, -2, 2);
    return projected([=] { return exp(a); }, {a}, r);
  });
  smooth("log", [](Rng& r) {
    Tensor a = param({dim_in(r, 3, 8)}, r, 0.2, 3.0);
    return projected([=] { return log(a); }, {a}, r);
  });
  cases.push_back({"clamp", kKinkTol, false, [](Rng& r) {
                     Tensor a = param({dim_in(r, 4, 8)}, r, -2, 2);
                     for (double& v : a.values()) {
                       if (std::fabs(std::fabs(v) - 1.0) < 1e-3) v += 3e-3;
                     }
                     return projected([=] { return clamp(a, -1.0, 1.0); }, {a}, r);
                   }});
  smooth("softmax", [](Rng& r) {
    Tensor a = param({dim_in(r, 1, 3), dim_in(r, 2, 5)}, r, -2, 2);
    return projected([=] { return softmax(a); }, {a}, r);
  });
  smooth("sum", [](Rng& r) {
    Tensor a = param({dim_in(r, 1, 3), dim_in(r, 2, 4)}, r);
    return projected([=] { return sum(a); }, {a}, r);
  });
  smooth("mean", [](Rng& r) {
    Tensor a = param({dim_in(r, 1, 3), dim_in(r, 2, 4)}, r);
    return projected([=] { return mean(a); }, {a}, r);
  });
  smooth("cross_entropy", [](Rng& r) {
    const std::size_t n = dim_in(r, 2, 5), v = dim_in(r, 2, 6);
    Tensor a = param({n, v}, r, -2, 2);
    std::vector<std::int32_t> targets(n);
    std::vector<double> weights(n);
    for (std::size_t i = 0; i < n; ++i) {
      targets[i] = static_cast<std::int32_t>(r.index(v));
      weights[i] = r.uniform() < 0.2 ? 0.0 : 1.0;
    }
    return Instance{[=] { return cross_entropy(a, targets, weights); }, {a}, nullptr};
  });
  smooth("embedding", [](Rng& r) {
    const std::size_t vocab = dim_in(r, 3, 6);
    Tensor table = param({vocab, dim_in(r, 2, 4)}, r);
    IntTensor ids({2, dim_in(r, 2, 5)});
    for (auto& id : ids.data) id = static_cast<std::int32_t>(r.index(vocab));
    return projected([=] { return embedding(ids, table); }, {table}, r);
  });
  smooth("layer_norm", [](Rng& r) {
    Tensor a = param({dim_in(r, 1, 3), dim_in(r, 3, 6)}, r, -2, 2);
    return projected([=] { return layer_norm(a, 1e-5); }, {a}, r);
  });
  smooth("conv1d", [](Rng& r) {
    const std::size_t ci = dim_in(r, 1, 3), co = dim_in(r, 1, 3), k = dim_in(r, 1, 3);
    const std::size_t stride = dim_in(r, 1, 2), len = dim_in(r, 4, 8);
    const std::size_t out_len = same_output_length(len, stride);
    const std::size_t pad = same_pad_left(len, k, stride);
    Tensor x = param({2, ci, len}, r), w = param({co, ci, k}, r), b = param({co}, r);
    return projected([=] { return conv1d(x, w, b, stride, pad, out_len); }, {x, w, b}, r);
  });
  smooth("conv_transpose1d", [](Rng& r) {
    const std::size_t ci = dim_in(r, 1, 3), co = dim_in(r, 1, 3), k = dim_in(r, 1, 3);
    const std::size_t stride = dim_in(r, 1, 2), m = dim_in(r, 2, 5);
    const std::size_t out_len = m * stride;
    const std::size_t pad = same_pad_left(out_len, k, stride);
    Tensor x = param({2, ci, m}, r), w = param({ci, co, k}, r), b = param({co}, r);
    return projected([=] { return conv_transpose1d(x, w, b, stride, pad, out_len); }, {x, w, b}, r);
  });
  smooth("batch_norm_train", [](Rng& r) {
    const std::size_t c = dim_in(r, 1, 3);
    Tensor x = param({dim_in(r, 2, 4), c, dim_in(r, 2, 4)}, r, -2, 2);
    Tensor g = param({c}, r, 0.5, 1.5), b = param({c}, r);
    auto stats = std::make_shared<std::vector<double>>(2 * c);
    return projected(
        [=] {
          std::span<double> s(*stats);
          return batch_norm_train(x, g, b, 1e-5, s.subspan(0, c), s.subspan(c, c));
        },
        {x, g, b}, r);
  });
  smooth("batch_norm_eval", [](Rng& r) {
    const std::size_t c = dim_in(r, 1, 3);
    Tensor x = param({2, c, dim_in(r, 2, 4)}, r);
    Tensor g = param({c}, r, 0.5, 1.5), b = param({c}, r);
    std::vector<double> rm(c), rv(c);
    for (std::size_t i = 0; i < c; ++i) {
      rm[i] = r.uniform() - 0.5;
      rv[i] = 0.5 + r.uniform();
    }
    return projected([=] { return batch_norm_eval(x, g, b, rm, rv, 1e-5); }, {x, g, b}, r);
  });
  return cases;
}

std::vector<Case> layer_cases() {
  std::vector<Case> cases;
  auto add_case = [&](std::string name, double tol, bool guard, std::function<Instance(Rng&)> make) {
    cases.push_back({std::move(name), tol, guard, std::move(make)});
  };
  add_case("linear", kSmoothTol, false, [](Rng& r) {
    auto store = std::make_shared<ParamStore>();
    Linear l = make_linear(*store, "l", dim_in(r, 2, 4), dim_in(r, 2, 4), r);
    Tensor x = param({dim_in(r, 1, 3), l.in_features}, r);
    Instance inst = projected([=] { return linear(x, l); }, {x, l.weight, l.bias}, r);
    inst.keep_alive = store;
    return inst;
  });
  add_case("conv1d_layer", kSmoothTol, false, [](Rng& r) {
    auto store = std::make_shared<ParamStore>();
    Conv1dLayer c = make_conv1d(*store, "c", dim_in(r, 1, 3), dim_in(r, 1, 3), 3, 2, r);
    Tensor x = param({2, c.in_channels, 2 * dim_in(r, 2, 4)}, r);
    Instance inst = projected([=] { return conv1d_forward(x, c); }, {x, c.weight, c.bias}, r);
    inst.keep_alive = store;
    return inst;
  });
  add_case("deconv1d_layer", kSmoothTol, false, [](Rng& r) {
    auto store = std::make_shared<ParamStore>();
    Deconv1dLayer d = make_deconv1d(*store, "d", dim_in(r, 1, 3), dim_in(r, 1, 3), 3, 2, r);
    Tensor x = param({2, d.in_channels, dim_in(r, 2, 4)}, r);
    Instance inst = projected([=] { return deconv1d_forward(x, d); }, {x, d.weight, d.bias}, r);
    inst.keep_alive = store;
    return inst;
  });
  add_case("batchnorm_layer", kSmoothTol, false, [](Rng& r) {
    auto store = std::make_shared<ParamStore>();
    auto bn = std::make_shared<BatchNorm1d>(make_batchnorm(*store, "bn", dim_in(r, 1, 3)));
    Tensor x = param({3, bn->channels, dim_in(r, 2, 4)}, r, -2, 2);
    Instance inst = projected([=] { return batchnorm_forward(x, *bn, Mode::kTrain); },
                              {x, bn->gain, bn->bias}, r);
    inst.keep_alive = store;
    return inst;
  });
  add_case("lstm_unrolled", kSmoothTol, false, [](Rng& r) {
    auto store = std::make_shared<ParamStore>();
    LstmCell cell = make_lstm(*store, "lstm", dim_in(r, 1, 3), dim_in(r, 4, 6), r);
    Tensor gain = cell.ln_gain, bias = cell.ln_bias;
    for (double& v : gain.values()) v = 0.5 + r.uniform();
    for (double& v : bias.values()) v = r.uniform() - 0.5;
    const std::size_t steps = dim_in(r, 2, 5);
    Tensor x = param({steps, 2, cell.input_size}, r);
    Instance inst = projected(
        [=] {
          LstmState s = lstm_zero_state(2, cell.hidden_size);
          std::vector<Tensor> hs;
          for (std::size_t t = 0; t < steps; ++t) {
            s = lstm_step(reshape(slice(x, 0, t, t + 1), {2, cell.input_size}), s, cell);
            hs.push_back(s.h);
          }
          return concat(hs, 0);
        },
        {x, cell.w_input, cell.w_hidden, cell.ln_gain, cell.ln_bias}, r);
    inst.keep_alive = store;
    return inst;
  });
  add_case("masked_conv_stack", kKinkTol, true, [](Rng& r) {
    auto store = std::make_shared<ParamStore>();
    MaskedConvStack m = make_masked_stack(*store, "m", dim_in(r, 1, 3), dim_in(r, 1, 3), dim_in(r, 2, 3), r);
    randomize(*store, r, 1.0);
    Tensor x = param({2, m.in_channels, dim_in(r, 3, 6)}, r);
    std::vector<Tensor> inputs{x};
    for (const auto& l : m.layers) {
      inputs.push_back(l.weight);
      inputs.push_back(l.bias);
    }
    Instance inst = projected([=] { return masked_conv_forward(x, m); }, inputs, r);
    inst.keep_alive = store;
    return inst;
  });
  return cases;
}

ModelSpec tiny_spec(Variant v, Rng& r) {
  ModelSpec s;
  s.variant = v;
  s.vocab_size = 7;
  s.seq_len = 8;
  s.latent_dim = 3;
  s.embed_dim = 3;
  s.encoder_channels = {3, 4};
  s.kernel_size = 3;
  s.stride = 2;
  s.lstm_hidden = 6;
  s.bytenet_layers = 2;
  s.bytenet_channels = 4;
  s.alpha = s.has_aux_pathway() ? 0.2 + 0.3 * r.uniform() : 0.0;
  s.input_dropout = v == Variant::kConvDeconv ? 0.0 : 0.25;
  return s;
}

Case model_case(Variant v) {
  return {"model_" + variant_name(v), kKinkTol, true, [v](Rng& r) {
            auto model = std::make_shared<VaeModel>(tiny_spec(v, r), r.next_u64());
            randomize(model->store(), r, 0.5);
            Batch batch;
            batch.ids = IntTensor({3, 8});
            for (auto& id : batch.ids.data) id = static_cast<std::int32_t>(kNumReserved + r.index(2));
            batch.mask.assign(24, 1.0);
            batch.mask[23] = 0.0;
            batch.lengths = {8, 8, 7};
            Tensor noise = random_tensor({3, 3}, r);
            const std::uint64_t drop_seed = r.next_u64();
            std::vector<Tensor> inputs;
            for (const auto& [name, p] : model->store().params()) inputs.push_back(p);
            return Instance{[=] {
                              Rng drop(drop_seed);
                              return model->forward(batch, noise, 0.7, Mode::kTrain, &drop).objective;
                            },
                            inputs, model};
          }};
}

}  // namespace

std::vector<SuiteEntry> gradcheck_suite(std::string_view scope, std::size_t instances, std::uint64_t seed) {
  std::vector<Case> cases;
  if (scope == "ops") {
    cases = op_cases();
  } else if (scope == "layers") {
    cases = layer_cases();
  } else if (scope == "models") {
    for (Variant v : {Variant::kConvDeconv, Variant::kHybridLstm, Variant::kHybridBytenet, Variant::kLstmVae}) {
      cases.push_back(model_case(v));
    }
  } else {
    throw ConfigError("unknown gradcheck scope '" + std::string(scope) + "' (ops, layers, models)");
  }
  std::vector<SuiteEntry> out;
  Rng rng(seed);
  for (const Case& c : cases) {
    SuiteEntry e;
    e.name = c.name;
    e.tolerance = c.tolerance;
    bool finite = true;
    for (std::size_t i = 0; i < instances; ++i) {
      Instance inst = c.make(rng);
      GradCheckOptions opt;
      opt.kink_guard = c.kink_guard;
      const GradCheckResult res = grad_check(inst.loss, inst.inputs, opt);
      e.max_rel_error = std::max(e.max_rel_error, res.max_rel_error);
      e.checked += res.checked;
      e.skipped += res.skipped;
      finite = finite && res.finite;
      ++e.instances;
    }
    e.passed = finite && e.max_rel_error < e.tolerance && e.checked > 0;
    out.push_back(e);
  }
  return out;
}

std::string format_suite(const std::vector<SuiteEntry>& entries) {
  std::string s = "name,instances,checked,skipped,max_rel_error,tolerance,status\n";
  char buf[256];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.3e,%.0e,%s\n", e.name.c_str(), e.instances, e.checked,
                  e.skipped, e.max_rel_error, e.tolerance, e.passed ? "ok" : "FAIL");
    s += buf;
  }
  return s;
}

}  // namespace tvae
