#include "tvae/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "tvae/errors.hpp"
#include "tvae/generate.hpp"

namespace tvae {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTrainStreamSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kValidWindowSalt = 0xc2b2ae3d27d4eb4fULL;
constexpr std::uint64_t kEvalNoiseSalt = 0x165667b19e3779f9ULL;

std::size_t seq_unit(const ModelSpec& spec) {
  std::size_t unit = 1;
  for (std::size_t i = 0; i < spec.encoder_depth(); ++i) unit *= spec.stride;
  return unit;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open corpus file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double parse_meta_double(const CheckpointData& data, const std::string& key) {
  const std::string* v = data.meta(key);
  if (!v) throw FileError("checkpoint lacks metadata '" + key + "'");
  double out = 0.0;
  auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc()) throw FileError("checkpoint metadata '" + key + "' is malformed");
  return out;
}

std::size_t parse_meta_size(const CheckpointData& data, const std::string& key) {
  const std::string* v = data.meta(key);
  if (!v) throw FileError("checkpoint lacks metadata '" + key + "'");
  std::size_t out = 0;
  auto res = std::from_chars(v->data(), v->data() + v->size(), out);
  if (res.ec != std::errc()) throw FileError("checkpoint metadata '" + key + "' is malformed");
  return out;
}

void copy_values(const Tensor& from, Tensor to) {
  std::copy(from.values().begin(), from.values().end(), to.values().begin());
}

}  // namespace

// ---- corpus ----

fs::path resolve_data_path(const std::string& path) {
  fs::path p(path);
  if (p.is_relative()) {
    if (const char* base = std::getenv("TVAE_DATA_DIR"); base && *base) return fs::path(base) / p;
  }
  return p;
}

std::string load_corpus_text(const DataConfig& data, std::uint64_t seed) {
  std::string text;
  if (data.source == "file") {
    text = read_text_file(resolve_data_path(data.path));
  } else if (data.source == "tweets") {
    for (const auto& t : synth_raw_tweets(data.corpus_length, seed)) text += t + "\n";
  } else {
    SynthSpec s;
    s.grammar = data.grammar;
    s.length = data.corpus_length;
    s.seed = seed;
    s.period = data.period;
    s.alphabet = data.alphabet;
    s.line_len = data.line_len;
    text = synth_corpus(s);
  }
  if (data.clean_tweets) {
    std::string cleaned;
    for (const auto& line : split_lines(text)) cleaned += clean_tweet(line) + "\n";
    text = std::move(cleaned);
  }
  return text;
}

Corpus build_corpus(const DataConfig& data, std::uint64_t seed, const Vocab* vocab) {
  const std::string text = load_corpus_text(data, seed);
  Corpus c;
  c.mode = data.mode;
  c.window_len = data.window_len;
  if (data.mode == CorpusMode::kWindows) {
    c.vocab = vocab ? *vocab : Vocab::build(text);
    const auto ids = c.vocab.encode(text);
    const std::size_t cut = ids.size() * 9 / 10;
    c.train_stream.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut));
    c.valid_stream.assign(ids.begin() + static_cast<std::ptrdiff_t>(cut), ids.end());
    if (c.train_stream.size() < data.window_len || c.valid_stream.size() < data.window_len) {
      throw ConfigError("corpus of " + std::to_string(ids.size()) +
                        " characters is too short for data.window_len " + std::to_string(data.window_len));
    }
  } else {
    const auto lines = split_lines(text);
    if (lines.empty()) throw ConfigError("corpus has no lines");
    std::string joined;
    for (const auto& l : lines) joined += l;
    c.vocab = vocab ? *vocab : Vocab::build(joined);
    for (const auto& l : lines) {
      (is_validation_line(l) ? c.valid_lines : c.train_lines).push_back(c.vocab.encode(l));
    }
    // Tiny corpora may hash no line into validation.
    if (c.valid_lines.empty() && c.train_lines.size() > 1) {
      c.valid_lines.push_back(c.train_lines.back());
      c.train_lines.pop_back();
    }
    if (c.train_lines.empty() || c.valid_lines.empty()) {
      throw ConfigError("corpus needs at least two lines");
    }
  }
  return c;
}

ModelSpec resolve_model_spec(const TrainConfig& config, const Corpus& corpus) {
  ModelSpec spec = config.model;
  spec.vocab_size = corpus.vocab.size();
  if (spec.seq_len == 0) {
    std::size_t need = 0;
    if (corpus.mode == CorpusMode::kWindows) {
      need = corpus.window_len;
    } else {
      for (const auto* set : {&corpus.train_lines, &corpus.valid_lines}) {
        for (const auto& l : *set) need = std::max(need, l.size() + 1);
      }
    }
    const std::size_t unit = seq_unit(spec);
    spec.seq_len = (need + unit - 1) / unit * unit;
  }
  if (corpus.mode == CorpusMode::kWindows && corpus.window_len > spec.seq_len) {
    throw ConfigError("data.window_len exceeds model.seq_len");
  }
  spec.validate();
  return spec;
}

// ---- metric log ----

std::string metrics_header() {
  return "step,train_rec_nll,train_kl,train_aux_nll,train_j_hybrid,valid_rec_nll,valid_kl,"
         "valid_aux_nll,kl_weight,bpc,kl_bpc,lr,wallclock";
}

std::string format_metric_row(const MetricRow& r) {
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", r.wallclock);
  std::string s = std::to_string(r.step);
  for (double v : {r.train_rec_nll, r.train_kl, r.train_aux_nll, r.train_j_hybrid, r.valid_rec_nll,
                   r.valid_kl, r.valid_aux_nll, r.kl_weight, r.bpc, r.kl_bpc, r.lr}) {
    s += "," + format_double(v);
  }
  return s + "," + wall;
}

std::vector<MetricRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open metrics file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != metrics_header()) {
    throw FileError("'" + path.string() + "' does not have the metrics header");
  }
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc()) throw FileError("malformed metrics cell '" + cell + "'");
      f.push_back(v);
    }
    if (f.size() != 13) throw FileError("metrics row has " + std::to_string(f.size()) + " fields");
    MetricRow r;
    r.step = static_cast<std::size_t>(f[0]);
    r.train_rec_nll = f[1];
    r.train_kl = f[2];
    r.train_aux_nll = f[3];
    r.train_j_hybrid = f[4];
    r.valid_rec_nll = f[5];
    r.valid_kl = f[6];
    r.valid_aux_nll = f[7];
    r.kl_weight = f[8];
    r.bpc = f[9];
    r.kl_bpc = f[10];
    r.lr = f[11];
    r.wallclock = f[12];
    rows.push_back(r);
  }
  return rows;
}

// ---- trainer ----

namespace {

TrainConfig checked(TrainConfig c) {
  c.validate();
  return c;
}

TrainConfig with_resolved_model(TrainConfig c, const Corpus& corpus) {
  c.model = resolve_model_spec(c, corpus);
  return c;
}

}  // namespace

Trainer::Trainer(TrainConfig config) : Trainer(config, build_corpus(checked(config).data, config.seed)) {}

Trainer::Trainer(TrainConfig config, Corpus corpus)
    : config_(with_resolved_model(checked(std::move(config)), corpus)),
      corpus_(std::move(corpus)),
      model_(config_.model, config_.seed),
      adam_(model_.store()),
      rng_(config_.seed ^ kTrainStreamSalt),
      start_(std::chrono::steady_clock::now()) {
  const std::size_t seq = config_.model.seq_len;
  if (corpus_.mode == CorpusMode::kWindows) {
    Rng vr(config_.seed ^ kValidWindowSalt);
    const auto starts =
        sample_window_starts(corpus_.valid_stream.size(), corpus_.window_len, config_.eval_examples, vr);
    valid_batch_ = make_window_batch(corpus_.valid_stream, starts, corpus_.window_len, seq);
  } else {
    std::vector<std::size_t> idx(std::min(config_.eval_examples, corpus_.valid_lines.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() < 2) throw ConfigError("validation set needs at least two lines");
    valid_batch_ = make_line_batch(corpus_.valid_lines, idx, seq);
  }
}

double Trainer::kl_weight_for(std::size_t step) const {
  if (config_.anneal_steps == 0) return config_.kl_weight_cap;
  return config_.kl_weight_cap * kl_weight_at(step, AnnealSchedule{config_.anneal_steps});
}

Batch Trainer::next_batch() {
  const std::size_t batch = config_.batch_size, seq = config_.model.seq_len;
  if (corpus_.mode == CorpusMode::kWindows) {
    const auto starts = sample_window_starts(corpus_.train_stream.size(), corpus_.window_len, batch, rng_);
    return make_window_batch(corpus_.train_stream, starts, corpus_.window_len, seq);
  }
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = rng_.index(corpus_.train_lines.size());
  return make_line_batch(corpus_.train_lines, idx, seq);
}

LossBreakdown Trainer::train_step() {
  const Batch batch = next_batch();
  Tensor noise(Shape{batch.batch_size(), config_.model.latent_dim});
  for (double& v : noise.values()) v = rng_.normal();
  const double kl_weight = kl_weight_for(step_);
  ParamStore& store = model_.store();
  store.zero_grad();
  Tape tape;
  ForwardResult fr;
  {
    TapeScope scope(tape);
    fr = model_.forward(batch, noise, kl_weight, Mode::kTrain, &rng_);
  }
  if (!std::isfinite(fr.objective.item())) {
    throw NumericError("non-finite loss at step " + std::to_string(step_ + 1));
  }
  tape.backward(fr.objective);
  clip_grad_norm(store, config_.grad_clip);
  adam_.step(store, lr_at(step_, config_.lr, config_.lr_decay, config_.lr_decay_every));
  ++step_;
  ++acc_count_;
  acc_rec_ += fr.losses.rec_nll;
  acc_kl_ += fr.losses.kl;
  acc_aux_ += fr.losses.aux_nll;
  acc_j_ += fr.losses.j_hybrid;
  return fr.losses;
}

LossBreakdown Trainer::evaluate() {
  Rng noise_rng(config_.seed ^ kEvalNoiseSalt);
  Tensor noise(Shape{valid_batch_.batch_size(), config_.model.latent_dim});
  for (double& v : noise.values()) v = noise_rng.normal();
  const double kl_weight = kl_weight_for(step_ == 0 ? 0 : step_ - 1);
  return model_.forward(valid_batch_, noise, kl_weight, Mode::kEval, nullptr).losses;
}

MetricRow Trainer::make_row(double wallclock) {
  MetricRow row;
  row.step = step_;
  if (acc_count_ > 0) {
    const double n = static_cast<double>(acc_count_);
    row.train_rec_nll = acc_rec_ / n;
    row.train_kl = acc_kl_ / n;
    row.train_aux_nll = acc_aux_ / n;
    row.train_j_hybrid = acc_j_ / n;
  }
  acc_count_ = 0;
  acc_rec_ = acc_kl_ = acc_aux_ = acc_j_ = 0.0;
  const LossBreakdown valid = evaluate();
  row.valid_rec_nll = valid.rec_nll;
  row.valid_kl = valid.kl;
  row.valid_aux_nll = valid.aux_nll;
  row.kl_weight = valid.kl_weight;
  row.bpc = valid.bpc;
  row.kl_bpc = valid.kl_bpc;
  const std::size_t last = step_ == 0 ? 0 : step_ - 1;
  row.lr = lr_at(last, config_.lr, config_.lr_decay, config_.lr_decay_every);
  row.wallclock = wallclock;
  return row;
}

void Trainer::run(std::size_t until, const std::function<void(const MetricRow&)>& on_row,
                  const std::function<void()>& on_step) {
  while (step_ < until) {
    train_step();
    if (on_step) on_step();
    if (step_ % config_.eval_interval == 0 || step_ == config_.max_steps) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      MetricRow row = make_row(secs);
      if (on_row) on_row(row);
    }
  }
}

CheckpointData Trainer::snapshot() const {
  CheckpointData d;
  d.metadata = model_key_values(config_.model);
  for (auto& kv : config_to_key_values(config_)) {
    if (kv.first.rfind("model.", 0) != 0) d.metadata.push_back(std::move(kv));
  }
  std::string cps;
  for (char32_t c : corpus_.vocab.chars()) cps += (cps.empty() ? "" : " ") + std::to_string(c);
  d.metadata.emplace_back("vocab.codepoints", cps);
  d.metadata.emplace_back("state.step", std::to_string(step_));
  d.metadata.emplace_back("state.adam_t", std::to_string(adam_.steps()));
  d.metadata.emplace_back("state.rng", rng_.state());
  d.metadata.emplace_back("state.acc_count", std::to_string(acc_count_));
  d.metadata.emplace_back("state.acc_rec", format_double(acc_rec_));
  d.metadata.emplace_back("state.acc_kl", format_double(acc_kl_));
  d.metadata.emplace_back("state.acc_aux", format_double(acc_aux_));
  d.metadata.emplace_back("state.acc_j", format_double(acc_j_));
  for (const auto& [name, t] : model_.store().all()) d.tensors.emplace_back(name, t.clone());
  const auto& params = model_.store().params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& shape = params[i].second.shape();
    d.tensors.emplace_back("adam.m/" + params[i].first, Tensor(shape, adam_.first_moments()[i]));
    d.tensors.emplace_back("adam.v/" + params[i].first, Tensor(shape, adam_.second_moments()[i]));
  }
  return d;
}

TrainConfig config_from_checkpoint(const CheckpointData& data) {
  KeyValues kv;
  for (const auto& p : data.metadata) {
    const bool config_key = p.first.rfind("model.", 0) == 0 || p.first.rfind("train.", 0) == 0 ||
                            p.first.rfind("data.", 0) == 0;
    if (config_key && p.first != "model.vocab_size") kv.push_back(p);
  }
  if (kv.empty()) throw FileError("checkpoint carries no configuration");
  TrainConfig c;
  apply_key_values(c, kv);
  c.model.vocab_size = parse_meta_size(data, "model.vocab_size");
  return c;
}

Vocab vocab_from_checkpoint(const CheckpointData& data) {
  const std::string* v = data.meta("vocab.codepoints");
  if (!v) throw FileError("checkpoint lacks metadata 'vocab.codepoints'");
  std::vector<char32_t> chars;
  std::stringstream ss(*v);
  unsigned long cp = 0;
  while (ss >> cp) chars.push_back(static_cast<char32_t>(cp));
  return Vocab::from_chars(std::move(chars));
}

void check_checkpoint_matches(const CheckpointData& data, const VaeModel& model) {
  std::vector<std::string> problems;
  for (const auto& [key, expected] : model_key_values(model.spec())) {
    const std::string* got = data.meta(key);
    if (!got) {
      problems.push_back(key + " missing");
    } else if (*got != expected) {
      problems.push_back(key + " (checkpoint " + *got + ", model " + expected + ")");
    }
  }
  for (const auto& [name, t] : model.store().all()) {
    const Tensor* stored = data.tensor(name);
    if (!stored) {
      problems.push_back("tensor " + name + " missing");
    } else if (stored->shape() != t.shape()) {
      problems.push_back("tensor " + name + " shape " + shape_str(stored->shape()) + " vs " +
                         shape_str(t.shape()));
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& p : problems) msg += " " + p + ";";
    msg.pop_back();
    throw ConfigError(msg);
  }
}

void load_parameters(VaeModel& model, const CheckpointData& data) {
  check_checkpoint_matches(data, model);
  for (const auto& [name, t] : model.store().all()) copy_values(*data.tensor(name), t);
}

void Trainer::restore(const CheckpointData& d) {
  check_checkpoint_matches(d, model_);
  const auto& params = model_.store().params();
  std::vector<std::string> problems;
  for (const auto& [name, t] : params) {
    for (const char* kind : {"adam.m/", "adam.v/"}) {
      const Tensor* s = d.tensor(kind + name);
      if (!s || s->shape() != t.shape()) problems.push_back(kind + name);
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint optimizer state does not match:";
    for (const auto& p : problems) msg += " " + p;
    throw ConfigError(msg);
  }
  // Everything is validated; now commit.
  load_parameters(model_, d);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto m = d.tensor("adam.m/" + params[i].first)->values();
    const auto v = d.tensor("adam.v/" + params[i].first)->values();
    adam_.first_moments()[i].assign(m.begin(), m.end());
    adam_.second_moments()[i].assign(v.begin(), v.end());
  }
  adam_.set_steps(parse_meta_size(d, "state.adam_t"));
  step_ = parse_meta_size(d, "state.step");
  const std::string* rng_state = d.meta("state.rng");
  if (!rng_state) throw FileError("checkpoint lacks metadata 'state.rng'");
  rng_.set_state(*rng_state);
  acc_count_ = parse_meta_size(d, "state.acc_count");
  acc_rec_ = parse_meta_double(d, "state.acc_rec");
  acc_kl_ = parse_meta_double(d, "state.acc_kl");
  acc_aux_ = parse_meta_double(d, "state.acc_aux");
  acc_j_ = parse_meta_double(d, "state.acc_j");
}

Trainer Trainer::from_checkpoint(const CheckpointData& data) {
  TrainConfig config = config_from_checkpoint(data);
  const Vocab vocab = vocab_from_checkpoint(data);
  Corpus corpus = build_corpus(config.data, config.seed, &vocab);
  Trainer t(std::move(config), std::move(corpus));
  t.restore(data);
  return t;
}

// ---- run directory ----

std::string config_hash_hex(const TrainConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(config)));
  return buf;
}

RunResult run_training(const TrainConfig& config, const fs::path& out_root, const RunOptions& options) {
  RunResult result;
  result.run_dir = out_root / config_hash_hex(config);
  const fs::path ckpt_dir = result.run_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  {
    std::ofstream cfg(result.run_dir / "config.txt", std::ios::trunc);
    cfg << config_to_text(config);
  }

  Trainer trainer = options.resume ? Trainer::from_checkpoint(read_checkpoint(*options.resume))
                                   : Trainer(config);
  result.param_count = trainer.model().store().param_count();

  const fs::path metrics_path = result.run_dir / "metrics.csv";
  if (options.resume && fs::exists(metrics_path)) {
    for (const auto& r : read_metrics_csv(metrics_path)) {
      if (r.step <= trainer.step()) result.rows.push_back(r);
    }
  }
  std::ofstream metrics(metrics_path, std::ios::trunc);
  metrics << metrics_header() << "\n";
  for (const auto& r : result.rows) metrics << format_metric_row(r) << "\n";
  metrics.flush();

  auto save = [&](const std::string& name) {
    const CheckpointData snap = trainer.snapshot();
    write_checkpoint(ckpt_dir / name, snap);
    write_checkpoint(ckpt_dir / "last.tvae", snap);
  };
  const std::size_t interval = trainer.config().checkpoint_interval;
  trainer.run(
      trainer.config().max_steps,
      [&](const MetricRow& row) {
        result.rows.push_back(row);
        metrics << format_metric_row(row) << "\n";
        metrics.flush();
        if (options.log) {
          char line[200];
          std::snprintf(line, sizeof line, "step %zu  rec %.4f  kl %.4f  aux %.4f  bpc %.4f  kl_bpc %.4f\n",
                        row.step, row.valid_rec_nll, row.valid_kl, row.valid_aux_nll, row.bpc, row.kl_bpc);
          *options.log << line << std::flush;
        }
      },
      [&] {
        if (interval > 0 && trainer.step() % interval == 0 && trainer.step() != trainer.config().max_steps) {
          save("step_" + std::to_string(trainer.step()) + ".tvae");
        }
      });
  save("step_" + std::to_string(trainer.step()) + ".tvae");

  if (options.write_samples && trainer.config().sample_count > 0) {
    const ModelSpec& spec = trainer.config().model;
    std::size_t max_len = 0;
    bool stop = false;
    decode_limits(trainer.config(), spec, max_len, stop);
    const Tensor z = sample_prior(trainer.config().sample_count, spec.latent_dim, trainer.config().seed);
    std::ofstream samples(result.run_dir / "samples.txt", std::ios::trunc);
    for (const auto& s : greedy_decode(trainer.model(), trainer.corpus().vocab, z, max_len, stop)) {
      samples << s << "\n";
    }
  }
  return result;
}

// ---- latent probe ----

double probe_accuracy(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                      std::uint64_t seed) {
  const std::size_t n = features.size();
  if (n < 4 || labels.size() != n) throw ContractError("probe needs >= 4 labelled examples");
  const std::size_t dim = features[0].size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  const std::size_t n_train = n / 2;

  // Standardize with training statistics.
  std::vector<double> mu(dim, 0.0), sd(dim, 0.0);
  for (std::size_t k = 0; k < n_train; ++k) {
    for (std::size_t j = 0; j < dim; ++j) mu[j] += features[order[k]][j];
  }
  for (auto& m : mu) m /= static_cast<double>(n_train);
  for (std::size_t k = 0; k < n_train; ++k) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = features[order[k]][j] - mu[j];
      sd[j] += d * d;
    }
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n_train)) + 1e-8;
  auto x = [&](std::size_t i, std::size_t j) { return (features[i][j] - mu[j]) / sd[j]; };

  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  const double lr = 0.5, l2 = 1e-3;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t k = 0; k < n_train; ++k) {
      const std::size_t i = order[k];
      double s = b;
      for (std::size_t j = 0; j < dim; ++j) s += w[j] * x(i, j);
      const double err = 1.0 / (1.0 + std::exp(-s)) - labels[i];
      for (std::size_t j = 0; j < dim; ++j) gw[j] += err * x(i, j);
      gb += err;
    }
    for (std::size_t j = 0; j < dim; ++j) w[j] -= lr * (gw[j] / static_cast<double>(n_train) + l2 * w[j]);
    b -= lr * gb / static_cast<double>(n_train);
  }
  std::size_t correct = 0;
  for (std::size_t k = n_train; k < n; ++k) {
    const std::size_t i = order[k];
    double s = b;
    for (std::size_t j = 0; j < dim; ++j) s += w[j] * x(i, j);
    if ((s > 0.0 ? 1 : 0) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n - n_train);
}

}  // namespace tvae
