#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tvae/config.hpp"
#include "tvae/train.hpp"

namespace tvae {

// Desk-scale settings shared by the canned experiments.
inline constexpr const char* kSentenceAlphabet = "the quick brown fox jumps over the lazy dog ";

TrainConfig historyless_config(Variant variant, std::size_t length, std::uint64_t seed);
TrainConfig two_topic_config(Variant variant, double alpha, std::size_t bytenet_layers,
                             std::uint64_t seed);
TrainConfig tweets_config(std::uint64_t seed);

struct ExperimentOptions {
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 0;
  std::optional<std::size_t> steps;  // overrides every run's max_steps
  std::ostream* log = nullptr;
};

struct ExperimentRun {
  std::string label;
  TrainConfig config;
  RunResult result;
};

struct ExperimentReport {
  std::string name;
  std::vector<ExperimentRun> runs;
  std::string summary;
};

inline constexpr const char* kDeskScaleCaveat =
    "note: desk-scale run on synthetic corpora with reduced widths; only the qualitative "
    "orderings are expected to match, absolute numbers from large-scale training are out of scope";

std::vector<std::string> experiment_names();
ExperimentReport run_historyless(const ExperimentOptions& options,
                                 const std::vector<std::size_t>& lengths = {10, 20, 30, 50});
ExperimentReport run_kl_tradeoff(const ExperimentOptions& options,
                                 const std::vector<double>& alphas = {0.0, 0.1, 0.2, 0.5});
ExperimentReport run_receptive_field(const ExperimentOptions& options,
                                     const std::vector<std::size_t>& layers = {1, 2, 3, 5},
                                     const std::vector<double>& alphas = {0.0, 0.2});
ExperimentReport run_tweets_demo(const ExperimentOptions& options);
ExperimentReport run_experiment(std::string_view name, const ExperimentOptions& options);

// Topic probe on fresh two_topic lines: encodes `count` labelled lines in
// eval mode, samples z = mu + sigma * eps, and returns the held-out accuracy
// of a logistic-regression probe on z.
double latent_topic_probe(VaeModel& model, const Vocab& vocab, const DataConfig& data, std::size_t count,
                          std::uint64_t seed);

// Final validation row of a run.
const MetricRow& final_row(const ExperimentRun& run);
// Validation KL per scored character, in nats.
double kl_nats_per_char(const MetricRow& row);

}  // namespace tvae
