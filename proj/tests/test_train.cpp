#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "tvae/checkpoint.hpp"
#include "tvae/config.hpp"
#include "tvae/errors.hpp"
#include "tvae/train.hpp"

using namespace tvae;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(Variant v = Variant::kHybridBytenet) {
  TrainConfig c;
  c.model.variant = v;
  c.model.latent_dim = 4;
  c.model.embed_dim = 4;
  c.model.encoder_channels = {6, 8};
  c.model.lstm_hidden = 8;
  c.model.bytenet_layers = 2;
  c.model.bytenet_channels = 8;
  c.model.alpha = 0.2;
  c.model.input_dropout = v == Variant::kConvDeconv ? 0.0 : 0.25;
  c.data.grammar = Grammar::kRepeatPattern;
  c.data.alphabet = "abcdef";
  c.data.corpus_length = 3000;
  c.data.window_len = 16;
  c.batch_size = 4;
  c.eval_examples = 8;
  c.eval_interval = 10;
  c.max_steps = 40;
  c.anneal_steps = 20;
  c.sample_count = 2;
  c.lr = 3e-3;
  c.seed = 7;
  return c;
}

std::string strip_wallclock(const MetricRow& r) {
  MetricRow copy = r;
  copy.wallclock = 0;
  return format_metric_row(copy);
}

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("tvae_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Config, RoundTripThroughText) {
  auto c = small_config();
  c.data.alphabet = " ab c";
  TrainConfig back = load_config_file(
      [&] {
        auto dir = temp_dir("cfg");
        std::ofstream(dir / "c.txt") << config_to_text(c);
        return dir / "c.txt";
      }());
  EXPECT_EQ(config_to_text(back), config_to_text(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, UnknownKeyIsNamed) {
  TrainConfig c;
  try {
    apply_key_values(c, parse_key_values("model.variant = conv_deconv\ntrain.alhpa = 0.2\n"));
    FAIL() << "no error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.alhpa"), std::string::npos);
  }
}

TEST(Config, BadValuesRejected) {
  TrainConfig c;
  EXPECT_THROW(apply_key_values(c, {{"train.batch_size", "many"}}), ConfigError);
  EXPECT_THROW(apply_key_values(c, {{"model.variant", "transformer"}}), ConfigError);
  apply_key_values(c, {{"train.input_dropout", "1.5"}});
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, EncodeDecodeRoundTrip) {
  CheckpointData d;
  d.metadata = {{"a", "1"}, {"b", "x y"}};
  d.tensors.emplace_back("w", Tensor({2, 3}, {1, 2, 3, 4, 5, -0.0}));
  d.tensors.emplace_back("s", Tensor::scalar(3.25));
  auto back = decode_checkpoint(encode_checkpoint(d));
  EXPECT_EQ(back.metadata, d.metadata);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_EQ(back.tensors[0].second.shape(), (Shape{2, 3}));
  EXPECT_EQ(tvae::testing::to_vec(back.tensors[0].second), tvae::testing::to_vec(d.tensors[0].second));
  EXPECT_EQ(back.tensor("s")->item(), 3.25);
}

TEST(Checkpoint, CorruptionAndTruncationAreFileErrors) {
  CheckpointData d;
  d.metadata = {{"k", "v"}};
  d.tensors.emplace_back("w", Tensor({4}, {1, 2, 3, 4}));
  const std::string bytes = encode_checkpoint(d);
  for (std::size_t i = 0; i < bytes.size(); i += 7) {
    std::string bad = bytes;
    bad[i] = static_cast<char>(bad[i] ^ 0x10);
    EXPECT_THROW(decode_checkpoint(bad), FileError) << "byte " << i;
  }
  for (std::size_t n : {0ul, 3ul, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, n)), FileError) << "length " << n;
  }
  EXPECT_THROW(read_checkpoint("/nonexistent/x.tvae"), FileError);
}

TEST(Checkpoint, MismatchedSpecRejected) {
  Trainer a(small_config());
  auto other = small_config();
  other.model.bytenet_layers = 3;
  Trainer b(other);
  EXPECT_THROW(check_checkpoint_matches(a.snapshot(), b.model()), ConfigError);
  EXPECT_NO_THROW(check_checkpoint_matches(a.snapshot(), a.model()));
}

TEST(Trainer, ResumeIsBitExact) {
  for (Variant v : {Variant::kHybridBytenet, Variant::kHybridLstm}) {
    auto c = small_config(v);
    c.max_steps = 100;
    std::vector<std::string> straight, resumed;
    Trainer full(c);
    full.run(100, [&](const MetricRow& r) { straight.push_back(strip_wallclock(r)); });

    Trainer first(c);
    first.run(50, [&](const MetricRow& r) { resumed.push_back(strip_wallclock(r)); });
    const std::string bytes = encode_checkpoint(first.snapshot());
    Trainer second = Trainer::from_checkpoint(decode_checkpoint(bytes));
    EXPECT_EQ(second.step(), 50u);
    second.run(100, [&](const MetricRow& r) { resumed.push_back(strip_wallclock(r)); });
    EXPECT_EQ(straight, resumed) << variant_name(v);
    EXPECT_EQ(encode_checkpoint(full.snapshot()), encode_checkpoint(second.snapshot()));
  }
}

TEST(Trainer, KlWeightFollowsSchedule) {
  auto c = small_config();
  c.anneal_steps = 20;
  c.kl_weight_cap = 0.5;
  Trainer t(c);
  EXPECT_EQ(t.kl_weight_for(0), 0.0);
  EXPECT_EQ(t.kl_weight_for(10), 0.25);
  EXPECT_EQ(t.kl_weight_for(40), 0.5);
  c.anneal_steps = 0;
  EXPECT_EQ(Trainer(c).kl_weight_for(0), 0.5);
}

TEST(Trainer, UniformLogitsGiveLogTwoV) {
  auto c = small_config(Variant::kConvDeconv);
  Trainer t(c);
  for (const char* name : {"decoder.aux_head.weight", "decoder.aux_head.bias"}) {
    Tensor p = *t.model().store().find(name);
    for (double& v : p.values()) v = 0;
  }
  const double v = static_cast<double>(t.corpus().vocab.size());
  EXPECT_NEAR(t.evaluate().bpc, std::log2(v), 1e-9);
}

TEST(Trainer, ObjectiveDecreases) {
  auto c = small_config(Variant::kConvDeconv);
  c.anneal_steps = 0;
  c.kl_weight_cap = 0;
  c.max_steps = 120;
  c.eval_interval = 20;
  std::vector<MetricRow> rows;
  Trainer(c).run(120, [&](const MetricRow& r) { rows.push_back(r); });
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_LT(rows.back().train_j_hybrid, 0.8 * rows.front().train_j_hybrid);
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) EXPECT_LT(rows[i + 1].train_j_hybrid, rows[0].train_j_hybrid);
}

TEST(Trainer, NonFiniteParametersAbort) {
  Trainer t(small_config());
  Tensor p = *t.model().store().find("decoder.lm_head.bias");
  p.values()[0] = std::nan("");
  EXPECT_THROW(t.train_step(), NumericError);
}

TEST(RunTraining, DirectoryLayoutReproducibilityAndResume) {
  auto c = small_config();
  c.checkpoint_interval = 20;
  auto root_a = temp_dir("run_a"), root_b = temp_dir("run_b");
  auto a = run_training(c, root_a);
  auto b = run_training(c, root_b);
  EXPECT_EQ(a.run_dir.filename(), b.run_dir.filename());
  for (const char* f : {"config.txt", "metrics.csv", "samples.txt", "checkpoints/step_20.tvae",
                        "checkpoints/last.tvae"}) {
    EXPECT_TRUE(fs::exists(a.run_dir / f)) << f;
  }
  auto rows_a = read_metrics_csv(a.run_dir / "metrics.csv");
  auto rows_b = read_metrics_csv(b.run_dir / "metrics.csv");
  ASSERT_EQ(rows_a.size(), 4u);
  for (std::size_t i = 0; i < rows_a.size(); ++i) EXPECT_EQ(strip_wallclock(rows_a[i]), strip_wallclock(rows_b[i]));
  EXPECT_EQ(slurp(a.run_dir / "samples.txt"), slurp(b.run_dir / "samples.txt"));

  // Resume from the step-20 checkpoint into a fresh root.
  auto root_c = temp_dir("run_c");
  RunOptions opts;
  opts.resume = a.run_dir / "checkpoints/step_20.tvae";
  auto r = run_training(c, root_c, opts);
  auto rows_c = read_metrics_csv(r.run_dir / "metrics.csv");
  ASSERT_EQ(rows_c.size(), 2u);
  EXPECT_EQ(strip_wallclock(rows_c.back()), strip_wallclock(rows_a.back()));
  EXPECT_EQ(slurp(r.run_dir / "checkpoints/last.tvae"), slurp(a.run_dir / "checkpoints/last.tvae"));
}

TEST(Probe, SeparableFeaturesAreLearned) {
  Rng rng(3);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = 0; i < 400; ++i) {
    const int label = i % 2;
    x.push_back({label * 2.0 - 1.0 + 0.3 * rng.normal(), rng.normal()});
    y.push_back(label);
  }
  EXPECT_GT(probe_accuracy(x, y, 1), 0.95);
  for (auto& row : x) row[0] = rng.normal();
  EXPECT_LT(probe_accuracy(x, y, 1), 0.65);
}
