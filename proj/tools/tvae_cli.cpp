// tvae: command-line front end over the C API.
#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tvae/tvae.h"

namespace {

int fail(tvae_status st) {
  std::fprintf(stderr, "error: %s\n", tvae_last_error());
  return static_cast<int>(st);
}

// Prints and frees a library string.
void emit(char* s) {
  std::fputs(s, stdout);
  tvae_string_free(s);
}

const char* kCaveat =
    "note: desk-scale run on synthetic corpora with reduced widths; only the qualitative "
    "orderings are expected to match, absolute numbers from large-scale training are out of scope";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"character-level text VAE lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tvae_version());

  std::string config_path, out_dir = "runs", resume;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool verbose = false;
  auto* train = app.add_subcommand("train", "train one model");
  train->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "overrides train.seed");
  train->add_option("--out", out_dir, "root for run directories");
  train->add_option("--set", sets, "extra key=value overrides, applied after --config");
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train->add_flag("--verbose", verbose, "log metric rows to stderr");

  std::string exp_name;
  std::uint64_t exp_seed = 0;
  std::optional<std::size_t> exp_steps;
  auto* experiment = app.add_subcommand("experiment", "run a canned experiment");
  experiment->add_option("--name", exp_name)
      ->required()
      ->check(CLI::IsMember({"historyless", "kl_tradeoff", "receptive_field", "tweets_demo"}));
  experiment->add_option("--out", out_dir);
  experiment->add_option("--seed", exp_seed);
  experiment->add_option("--steps", exp_steps, "override the step budget of every run");
  experiment->add_flag("--verbose", verbose);

  std::string ckpt;
  std::size_t n = 5, steps = 8;
  std::uint64_t gen_seed = 0;
  auto* sample = app.add_subcommand("sample", "greedy decodes of prior draws");
  sample->add_option("--ckpt", ckpt)->required();
  sample->add_option("--n", n);
  sample->add_option("--seed", gen_seed);
  auto* interp = app.add_subcommand("interpolate", "decode along a line between two prior draws");
  interp->add_option("--ckpt", ckpt)->required();
  interp->add_option("--steps", steps);
  interp->add_option("--seed", gen_seed);

  std::string scope;
  std::size_t instances = 10;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--scope", scope)->required()->check(CLI::IsMember({"ops", "layers", "models"}));
  gradcheck->add_option("--instances", instances);
  gradcheck->add_option("--seed", gen_seed);

  std::string run_dir;
  auto* curves = app.add_subcommand("curves", "metrics of a run with cumulative minima, as CSV");
  curves->add_option("--run", run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& c : msg) if (c == '\n') c = ' ';
    std::fprintf(stderr, "error: usage: %s\n", msg.c_str());
    return 1;
  }

  char* out = nullptr;
  tvae_status st = TVAE_OK;
  if (*train) {
    std::string overrides;
    for (const auto& s : sets) overrides += s + "\n";
    std::uint64_t seed_value = seed.value_or(0);
    st = tvae_train(config_path.empty() ? nullptr : config_path.c_str(),
                    sets.empty() ? nullptr : overrides.c_str(), seed ? &seed_value : nullptr,
                    out_dir.c_str(), resume.empty() ? nullptr : resume.c_str(), verbose, &out);
    if (st != TVAE_OK) return fail(st);
    std::printf("%s\n", out);
    tvae_string_free(out);
  } else if (*experiment) {
    std::fprintf(stderr, "%s\n", kCaveat);
    st = tvae_experiment(exp_name.c_str(), out_dir.c_str(), exp_seed, exp_steps ? &*exp_steps : nullptr,
                         verbose, &out);
    if (st != TVAE_OK) return fail(st);
    emit(out);
  } else if (*sample || *interp) {
    tvae_model* model = nullptr;
    st = tvae_model_load(ckpt.c_str(), &model);
    if (st != TVAE_OK) return fail(st);
    st = *sample ? tvae_model_sample(model, n, gen_seed, &out)
                 : tvae_model_interpolate(model, steps, gen_seed, &out);
    tvae_model_free(model);
    if (st != TVAE_OK) return fail(st);
    emit(out);
  } else if (*gradcheck) {
    int ok = 0;
    st = tvae_gradcheck(scope.c_str(), instances, gen_seed, &out, &ok);
    if (st != TVAE_OK) return fail(st);
    emit(out);
    if (!ok) {
      std::fprintf(stderr, "error: numeric: gradient check failed for scope %s\n", scope.c_str());
      return 3;
    }
  } else if (*curves) {
    st = tvae_curves(run_dir.c_str(), &out);
    if (st != TVAE_OK) return fail(st);
    emit(out);
  }
  return 0;
}
