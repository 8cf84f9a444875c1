#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tvae/checkpoint.hpp"
#include "tvae/config.hpp"
#include "tvae/data.hpp"
#include "tvae/models.hpp"
#include "tvae/optim.hpp"

namespace tvae {

// Encoded training and validation data. Window corpora split the stream
// 90/10 (validation is the tail); line corpora use the hashed 99/1 split.
struct Corpus {
  Vocab vocab;
  CorpusMode mode = CorpusMode::kWindows;
  std::size_t window_len = 0;
  std::vector<std::int32_t> train_stream;
  std::vector<std::int32_t> valid_stream;
  std::vector<std::vector<std::int32_t>> train_lines;
  std::vector<std::vector<std::int32_t>> valid_lines;
};

// Relative paths resolve against $TVAE_DATA_DIR when it is set.
std::filesystem::path resolve_data_path(const std::string& path);
std::string load_corpus_text(const DataConfig& data, std::uint64_t seed);
Corpus build_corpus(const DataConfig& data, std::uint64_t seed, const Vocab* vocab = nullptr);
// Copy of config.model with vocab_size and an automatic seq_len filled in.
ModelSpec resolve_model_spec(const TrainConfig& config, const Corpus& corpus);

struct MetricRow {
  std::size_t step = 0;
  double train_rec_nll = 0.0;
  double train_kl = 0.0;
  double train_aux_nll = 0.0;
  double train_j_hybrid = 0.0;
  double valid_rec_nll = 0.0;
  double valid_kl = 0.0;
  double valid_aux_nll = 0.0;
  double kl_weight = 0.0;
  double bpc = 0.0;     // validation reconstruction bits per character
  double kl_bpc = 0.0;  // validation KL in bits per character
  double lr = 0.0;
  double wallclock = 0.0;
};

std::string metrics_header();
std::string format_metric_row(const MetricRow& row);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  Trainer(TrainConfig config, Corpus corpus);
  // Rebuilds the run state saved by snapshot(); the corpus is regenerated
  // from the stored config.
  static Trainer from_checkpoint(const CheckpointData& data);

  const TrainConfig& config() const { return config_; }
  const Corpus& corpus() const { return corpus_; }
  VaeModel& model() { return model_; }
  std::size_t step() const { return step_; }
  double kl_weight_for(std::size_t step) const;

  // One optimizer step. NumericError on a non-finite loss or gradient,
  // before any parameter changes.
  LossBreakdown train_step();
  // Eval-mode losses on the fixed validation batch, with fixed noise.
  LossBreakdown evaluate();
  const Batch& validation_batch() const { return valid_batch_; }
  // Averages the training losses since the previous row, then resets them.
  MetricRow make_row(double wallclock);

  // Trains until `until` steps, emitting a row every eval_interval steps and
  // at `until`.
  void run(std::size_t until, const std::function<void(const MetricRow&)>& on_row = {},
           const std::function<void()>& on_step = {});

  CheckpointData snapshot() const;
  void save(const std::filesystem::path& path) const { write_checkpoint(path, snapshot()); }

 private:
  Batch next_batch();
  void restore(const CheckpointData& data);

  TrainConfig config_;
  Corpus corpus_;
  VaeModel model_;
  Adam adam_;
  Rng rng_;
  Batch valid_batch_;
  std::size_t step_ = 0;
  // Running sums since the last emitted row.
  std::size_t acc_count_ = 0;
  double acc_rec_ = 0.0, acc_kl_ = 0.0, acc_aux_ = 0.0, acc_j_ = 0.0;
  std::chrono::steady_clock::time_point start_;
};

// Checks a checkpoint's model keys and tensor shapes against a model;
// ConfigError listing every offending entry.
void check_checkpoint_matches(const CheckpointData& data, const VaeModel& model);
// Validates, then copies parameters and buffers into the model.
void load_parameters(VaeModel& model, const CheckpointData& data);
TrainConfig config_from_checkpoint(const CheckpointData& data);
Vocab vocab_from_checkpoint(const CheckpointData& data);

struct RunOptions {
  std::optional<std::filesystem::path> resume;
  std::ostream* log = nullptr;
  bool write_samples = true;
};

struct RunResult {
  std::filesystem::path run_dir;
  std::vector<MetricRow> rows;
  std::size_t param_count = 0;
};

std::string config_hash_hex(const TrainConfig& config);
// Runs in out_root/<config hash>/ with config.txt, metrics.csv,
// checkpoints/ (step_N.tvae and last.tvae) and samples.txt.
RunResult run_training(const TrainConfig& config, const std::filesystem::path& out_root,
                       const RunOptions& options = {});

// Logistic-regression probe: trains on the first half of (features, labels)
// and returns accuracy on the second half.
double probe_accuracy(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                      std::uint64_t seed);

}  // namespace tvae
