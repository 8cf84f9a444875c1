#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tvae/data.hpp"
#include "tvae/models.hpp"

namespace tvae {

enum class CorpusMode { kWindows, kLines };

struct DataConfig {
  // "synthetic" generates the corpus from `grammar`; "tweets" generates
  // corpus_length tweet-like lines; "file" reads `path` (relative paths
  // resolve against $TVAE_DATA_DIR when set).
  std::string source = "synthetic";
  Grammar grammar = Grammar::kRepeatPattern;
  std::size_t corpus_length = 20000;
  std::size_t period = 0;
  std::string alphabet;
  std::size_t line_len = 24;
  std::string path;
  bool clean_tweets = false;
  CorpusMode mode = CorpusMode::kWindows;
  std::size_t window_len = 32;
};

struct TrainConfig {
  // vocab_size is filled from the corpus; seq_len 0 (the default here)
  // fits the data.
  ModelSpec model = [] {
    ModelSpec m;
    m.seq_len = 0;
    return m;
  }();
  DataConfig data;
  std::size_t batch_size = 32;
  std::size_t max_steps = 2000;
  std::size_t eval_interval = 100;
  std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint
  std::size_t eval_examples = 128;
  std::size_t sample_count = 8;
  double lr = 1e-3;
  double lr_decay = 0.98;
  std::size_t lr_decay_every = 1000;
  // 0 disables annealing: the KL weight is kl_weight_cap from the first step.
  std::size_t anneal_steps = 0;
  double kl_weight_cap = 1.0;
  double grad_clip = 0.0;  // global-norm cap, 0 = off
  std::uint64_t seed = 0;

  void validate() const;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Flat "key = value" lines; '#' starts a comment line; values may be wrapped
// in double quotes to keep surrounding whitespace.
KeyValues parse_key_values(std::string_view text);
// Applies every pair onto `config`; unknown keys raise ConfigError naming them.
void apply_key_values(TrainConfig& config, const KeyValues& pairs);
TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {});
// Every key with its current value, in a fixed order.
KeyValues config_to_key_values(const TrainConfig& config);
std::string config_to_text(const TrainConfig& config);
std::uint64_t config_hash(const TrainConfig& config);

// Model-architecture keys only, used to match checkpoints against specs.
KeyValues model_key_values(const ModelSpec& spec);

std::string format_double(double v);
std::string corpus_mode_name(CorpusMode m);

}  // namespace tvae
