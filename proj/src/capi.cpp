#include "tvae/tvae.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <iostream>
#include <new>
#include <string>

#include "tvae/errors.hpp"
#include "tvae/experiments.hpp"
#include "tvae/generate.hpp"
#include "tvae/gradcheck.hpp"
#include "tvae/train.hpp"

struct tvae_model {
  tvae::LoadedModel loaded;
};

namespace {

thread_local std::string g_last_error;

tvae_status status_for(const tvae::Error& e) {
  const std::string& k = e.kind();
  if (k == "config" || k == "contract") return TVAE_ERR_USAGE;
  if (k == "numeric") return TVAE_ERR_NUMERIC;
  return TVAE_ERR_RUNTIME;
}

template <class F>
tvae_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return TVAE_OK;
  } catch (const tvae::Error& e) {
    g_last_error = e.kind() + ": " + e.what();
    return status_for(e);
  } catch (const std::bad_alloc&) {
    g_last_error = "runtime: out of memory";
  } catch (const std::exception& e) {
    g_last_error = std::string("runtime: ") + e.what();
  } catch (...) {
    g_last_error = "runtime: unknown failure";
  }
  return TVAE_ERR_RUNTIME;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(bool ok, const char* what) {
  if (!ok) throw tvae::ContractError(what);
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

}  // namespace

extern "C" {

const char* tvae_version(void) { return "0.1.0"; }

const char* tvae_last_error(void) { return g_last_error.c_str(); }

void tvae_string_free(char* s) { std::free(s); }

tvae_status tvae_train(const char* config_path, const char* overrides, const uint64_t* seed,
                       const char* out_dir, const char* resume, int verbose, char** run_dir) {
  return guarded([&] {
    require(out_dir != nullptr && run_dir != nullptr, "out_dir and run_dir are required");
    tvae::TrainConfig config;
    if (config_path) config = tvae::load_config_file(config_path);
    if (overrides) tvae::apply_key_values(config, tvae::parse_key_values(overrides));
    if (seed) config.seed = *seed;
    tvae::RunOptions opts;
    if (resume) opts.resume = resume;
    if (verbose) opts.log = &std::cerr;
    const auto result = tvae::run_training(config, out_dir, opts);
    *run_dir = dup_string(result.run_dir.string());
  });
}

tvae_status tvae_experiment(const char* name, const char* out_dir, uint64_t seed, const size_t* steps,
                            int verbose, char** summary) {
  return guarded([&] {
    require(name != nullptr && out_dir != nullptr && summary != nullptr,
            "name, out_dir and summary are required");
    tvae::ExperimentOptions opts;
    opts.out_dir = out_dir;
    opts.seed = seed;
    if (steps) opts.steps = *steps;
    if (verbose) opts.log = &std::cerr;
    const auto report = tvae::run_experiment(name, opts);
    *summary = dup_string(report.summary);
  });
}

tvae_status tvae_model_load(const char* checkpoint, tvae_model** out) {
  return guarded([&] {
    require(checkpoint != nullptr && out != nullptr, "checkpoint and out are required");
    auto* m = new tvae_model{tvae::load_model(checkpoint)};
    *out = m;
  });
}

void tvae_model_free(tvae_model* model) { delete model; }

size_t tvae_model_latent_dim(const tvae_model* model) {
  return model ? model->loaded.model->spec().latent_dim : 0;
}

tvae_status tvae_model_sample(tvae_model* model, size_t n, uint64_t seed, char** text) {
  return guarded([&] {
    require(model != nullptr && text != nullptr, "model and text are required");
    require(n > 0, "sample count must be positive");
    auto& lm = model->loaded;
    const auto z = tvae::sample_prior(n, lm.model->spec().latent_dim, seed);
    *text = dup_string(join_lines(tvae::greedy_decode(*lm.model, lm.vocab, z, lm.max_len, lm.stop_at_eos)));
  });
}

tvae_status tvae_model_interpolate(tvae_model* model, size_t steps, uint64_t seed, char** text) {
  return guarded([&] {
    require(model != nullptr && text != nullptr, "model and text are required");
    auto& lm = model->loaded;
    const auto ends = tvae::sample_prior(2, lm.model->spec().latent_dim, seed);
    const std::size_t zd = lm.model->spec().latent_dim;
    const auto v = ends.values();
    const tvae::Tensor a({zd}, std::vector<double>(v.begin(), v.begin() + zd));
    const tvae::Tensor b({zd}, std::vector<double>(v.begin() + zd, v.end()));
    *text = dup_string(
        join_lines(tvae::interpolate(*lm.model, lm.vocab, a, b, steps, lm.max_len, lm.stop_at_eos)));
  });
}

tvae_status tvae_gradcheck(const char* scope, size_t instances, uint64_t seed, char** csv,
                           int* all_passed) {
  return guarded([&] {
    require(scope != nullptr && csv != nullptr, "scope and csv are required");
    const auto entries = tvae::gradcheck_suite(scope, instances, seed);
    *csv = dup_string(tvae::format_suite(entries));
    if (all_passed) {
      *all_passed = std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
    }
  });
}

tvae_status tvae_curves(const char* run_dir, char** csv) {
  return guarded([&] {
    require(run_dir != nullptr && csv != nullptr, "run_dir and csv are required");
    const auto rows = tvae::read_metrics_csv(std::filesystem::path(run_dir) / "metrics.csv");
    std::string out = tvae::metrics_header() + ",bpc_cummin,valid_rec_nll_cummin,train_j_hybrid_cummin\n";
    double bpc = 0, rec = 0, j = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      bpc = i == 0 ? r.bpc : std::min(bpc, r.bpc);
      rec = i == 0 ? r.valid_rec_nll : std::min(rec, r.valid_rec_nll);
      j = i == 0 ? r.train_j_hybrid : std::min(j, r.train_j_hybrid);
      out += tvae::format_metric_row(r) + "," + tvae::format_double(bpc) + "," + tvae::format_double(rec) +
             "," + tvae::format_double(j) + "\n";
    }
    *csv = dup_string(out);
  });
}

}  // extern "C"
