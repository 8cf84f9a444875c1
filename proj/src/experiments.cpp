#include "tvae/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "tvae/errors.hpp"

namespace tvae {

namespace {

TrainConfig desk_base(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.batch_size = 16;
  c.lr = 2e-3;
  c.eval_examples = 128;
  c.eval_interval = 100;
  c.sample_count = 8;
  c.model.latent_dim = 32;
  c.model.embed_dim = 16;
  c.model.encoder_channels = {32, 64, 96};
  c.model.lstm_hidden = 96;
  c.model.bytenet_channels = 64;
  return c;
}

}  // namespace

TrainConfig historyless_config(Variant variant, std::size_t length, std::uint64_t seed) {
  TrainConfig c = desk_base(seed);
  c.model.variant = variant;
  // Historyless: the recurrent baseline sees only DROP tokens.
  c.model.input_dropout = variant == Variant::kConvDeconv ? 0.0 : 1.0;
  c.model.alpha = 0.0;
  c.kl_weight_cap = 0.0;  // reconstruction term only
  c.max_steps = 3000;
  c.data.grammar = Grammar::kRepeatPattern;
  c.data.alphabet = kSentenceAlphabet;
  c.data.corpus_length = 20000;
  c.data.mode = CorpusMode::kWindows;
  c.data.window_len = length;
  return c;
}

TrainConfig two_topic_config(Variant variant, double alpha, std::size_t bytenet_layers,
                             std::uint64_t seed) {
  TrainConfig c = desk_base(seed);
  c.model.variant = variant;
  c.model.alpha = alpha;
  c.model.bytenet_layers = bytenet_layers;
  c.kl_weight_cap = 1.0;
  c.anneal_steps = 1000;
  c.max_steps = 3000;
  c.batch_size = 32;
  c.data.grammar = Grammar::kTwoTopic;
  c.data.corpus_length = 100000;
  c.data.line_len = 24;
  c.data.mode = CorpusMode::kLines;
  return c;
}

TrainConfig tweets_config(std::uint64_t seed) {
  TrainConfig c = desk_base(seed);
  c.model.variant = Variant::kHybridBytenet;
  c.model.alpha = 0.2;
  c.model.bytenet_layers = 3;
  c.model.input_dropout = 0.2;
  c.anneal_steps = 1000;
  c.max_steps = 3000;
  c.data.source = "tweets";
  c.data.clean_tweets = true;
  c.data.corpus_length = 4000;
  c.data.mode = CorpusMode::kLines;
  c.model.seq_len = 64;
  return c;
}

}  // namespace tvae

namespace tvae {

namespace fs = std::filesystem;

namespace {

ExperimentRun execute(const std::string& experiment, const std::string& label, TrainConfig config,
                      const ExperimentOptions& options) {
  if (options.steps) config.max_steps = *options.steps;
  if (options.log) *options.log << "[" << experiment << "] " << label << "\n" << std::flush;
  RunOptions ro;
  ro.log = options.log;
  ExperimentRun run{label, config, run_training(config, options.out_dir / experiment, ro)};
  return run;
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

}  // namespace

const MetricRow& final_row(const ExperimentRun& run) {
  if (run.result.rows.empty()) throw ContractError("run '" + run.label + "' produced no metric rows");
  return run.result.rows.back();
}

double latent_topic_probe(VaeModel& model, const Vocab& vocab, const DataConfig& data, std::size_t count,
                          std::uint64_t seed) {
  const std::string alphabet = data.alphabet.empty() ? "abcdefgh" : data.alphabet;
  const auto lines = two_topic_lines(count, data.line_len, alphabet, seed);
  std::vector<std::vector<std::int32_t>> encoded;
  std::vector<int> labels;
  for (const auto& l : lines) {
    encoded.push_back(vocab.encode(l.text));
    labels.push_back(l.topic);
  }
  std::vector<std::size_t> idx(encoded.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch batch = make_line_batch(encoded, idx, model.spec().seq_len);
  const LatentPosterior q = model.encode(batch.ids, Mode::kEval);
  Rng rng(seed ^ 0x5bd1e995ULL);
  Tensor noise(q.mu.shape());
  for (double& v : noise.values()) v = rng.normal();
  const Tensor z = reparameterize(q, noise);
  const std::size_t dim = z.dim(1);
  std::vector<std::vector<double>> features(count, std::vector<double>(dim));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < dim; ++j) features[i][j] = z.values()[i * dim + j];
  }
  return probe_accuracy(features, labels, seed);
}

double kl_nats_per_char(const MetricRow& row) { return row.kl_bpc * std::log(2.0); }

std::vector<std::string> experiment_names() {
  return {"historyless", "kl_tradeoff", "receptive_field", "tweets_demo"};
}

ExperimentReport run_historyless(const ExperimentOptions& options, const std::vector<std::size_t>& lengths) {
  ExperimentReport report{"historyless", {}, {}};
  report.summary = "length,conv_deconv_bpc,lstm_vae_bpc,conv_params,lstm_params\n";
  for (std::size_t len : lengths) {
    auto conv = execute(report.name, "conv_deconv L=" + std::to_string(len),
                        historyless_config(Variant::kConvDeconv, len, options.seed), options);
    auto lstm = execute(report.name, "lstm_vae L=" + std::to_string(len),
                        historyless_config(Variant::kLstmVae, len, options.seed), options);
    report.summary += std::to_string(len) + fmt(",%.4f,%.4f", final_row(conv).bpc, final_row(lstm).bpc) + "," +
                      std::to_string(conv.result.param_count) + "," + std::to_string(lstm.result.param_count) +
                      "\n";
    report.runs.push_back(std::move(conv));
    report.runs.push_back(std::move(lstm));
  }
  return report;
}

ExperimentReport run_kl_tradeoff(const ExperimentOptions& options, const std::vector<double>& alphas) {
  ExperimentReport report{"kl_tradeoff", {}, {}};
  report.summary = "alpha,kl_nats_per_char,rec_bpc,bound_bpc\n";
  for (double alpha : alphas) {
    auto run = execute(report.name, "hybrid_lstm alpha=" + format_double(alpha),
                       two_topic_config(Variant::kHybridLstm, alpha, 3, options.seed), options);
    const MetricRow& r = final_row(run);
    report.summary += format_double(alpha) + fmt(",%.5f,%.4f,%.4f", kl_nats_per_char(r), r.bpc, r.bpc + r.kl_bpc) + "\n";
    report.runs.push_back(std::move(run));
  }
  return report;
}

ExperimentReport run_receptive_field(const ExperimentOptions& options, const std::vector<std::size_t>& layers,
                                     const std::vector<double>& alphas) {
  ExperimentReport report{"receptive_field", {}, {}};
  report.summary = "layers,receptive_field,alpha,kl_nats_per_char,rec_bpc,bound_bpc\n";
  for (std::size_t n : layers) {
    for (double alpha : alphas) {
      auto run = execute(report.name, "hybrid_bytenet N=" + std::to_string(n) + " alpha=" + format_double(alpha),
                         two_topic_config(Variant::kHybridBytenet, alpha, n, options.seed), options);
      const MetricRow& r = final_row(run);
      report.summary += std::to_string(n) + "," + std::to_string(n + 1) + "," + format_double(alpha) +
                        fmt(",%.5f,%.4f,%.4f", kl_nats_per_char(r), r.bpc, r.bpc + r.kl_bpc) + "\n";
      report.runs.push_back(std::move(run));
    }
  }
  return report;
}

ExperimentReport run_tweets_demo(const ExperimentOptions& options) {
  ExperimentReport report{"tweets_demo", {}, {}};
  auto run = execute(report.name, "hybrid_bytenet on cleaned synthetic tweets", tweets_config(options.seed), options);
  const MetricRow& r = final_row(run);
  report.summary = "rec_bpc,kl_nats_per_char\n" + fmt("%.4f,%.5f\n", r.bpc, kl_nats_per_char(r));
  std::ifstream samples(run.result.run_dir / "samples.txt");
  std::string line;
  report.summary += "samples from the prior:\n";
  while (std::getline(samples, line)) report.summary += "  " + line + "\n";
  report.runs.push_back(std::move(run));
  return report;
}

ExperimentReport run_experiment(std::string_view name, const ExperimentOptions& options) {
  if (name == "historyless") return run_historyless(options);
  if (name == "kl_tradeoff") return run_kl_tradeoff(options);
  if (name == "receptive_field") return run_receptive_field(options);
  if (name == "tweets_demo") return run_tweets_demo(options);
  throw ConfigError("unknown experiment '" + std::string(name) +
                    "' (historyless, kl_tradeoff, receptive_field, tweets_demo)");
}

}  // namespace tvae
