#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tvae/errors.hpp"
#include "tvae/layers.hpp"

using namespace tvae;
using namespace tvae::testing;

TEST(Linear, IdentityWeights) {
  Rng rng(1);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w({4, 4});
  for (std::size_t i = 0; i < 4; ++i) w.values()[i * 4 + i] = 1;
  EXPECT_EQ(to_vec(linear(x, w, Tensor({4}))), to_vec(x));
}

TEST(Deconv, FiveStride2LayersFromLength2) {
  ParamStore store;
  Rng rng(2);
  Tensor h({1, 3, 2});
  for (int i = 0; i < 5; ++i) {
    auto layer = make_deconv1d(store, "d" + std::to_string(i), 3, 3, 3, 2, rng);
    h = deconv1d_forward(h, layer);
  }
  EXPECT_EQ(h.dim(2), 64u);
}

TEST(Conv, EncoderStackShapes) {
  ParamStore store;
  Rng rng(3);
  const std::vector<std::size_t> channels{128, 256, 512, 512, 512};
  Tensor h({1, 4, 64});
  std::size_t in = 4;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    auto layer = make_conv1d(store, "c" + std::to_string(i), in, channels[i], 3, 2, rng);
    h = conv1d_forward(h, layer);
    in = channels[i];
  }
  EXPECT_EQ(h.shape(), (Shape{1, 512, 2}));
}

TEST(BatchNorm, RunningMeanAfterOneBatch) {
  ParamStore store;
  auto bn = make_batchnorm(store, "bn", 2);
  Rng rng(4);
  Tensor x = random_tensor({3, 2, 5}, rng, 0, 4);
  batchnorm_forward(x, bn, Mode::kTrain);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = 0; t < 5; ++t) mean += x.values()[(b * 2 + c) * 5 + t];
    mean /= 15;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = 0; t < 5; ++t) sq += std::pow(x.values()[(b * 2 + c) * 5 + t] - mean, 2);
    EXPECT_NEAR(bn.running_mean.values()[c], 0.1 * mean, 1e-14);
    EXPECT_NEAR(bn.running_var.values()[c], 0.1 * sq / 14 + 0.9, 1e-14);
  }
}

TEST(BatchNorm, ConstantChannelMapsToZero) {
  ParamStore store;
  auto bn = make_batchnorm(store, "bn", 1);
  Tensor x({2, 1, 4}, 1.7);
  const Tensor y = batchnorm_forward(x, bn, Mode::kTrain);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, EvalIgnoresOtherBatchElements) {
  ParamStore store;
  auto bn = make_batchnorm(store, "bn", 2);
  Rng rng(5);
  batchnorm_forward(random_tensor({4, 2, 3}, rng), bn, Mode::kTrain);
  Tensor a = random_tensor({2, 2, 3}, rng);
  Tensor b = a.clone();
  for (std::size_t i = 6; i < 12; ++i) b.values()[i] += 5;  // second element only
  auto ya = to_vec(batchnorm_forward(a, bn, Mode::kEval));
  auto yb = to_vec(batchnorm_forward(b, bn, Mode::kEval));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(Lstm, ZeroWeightsKeepScaledCell) {
  ParamStore store;
  Rng rng(6);
  auto cell = make_lstm(store, "l", 2, 3, rng);
  for (double& v : cell.w_input.values()) v = 0;
  for (double& v : cell.w_hidden.values()) v = 0;
  LstmState s{Tensor({1, 3}), Tensor({1, 3}, {0.5, -1.0, 2.0})};
  auto next = lstm_step(Tensor({1, 2}), s, cell);
  const double f = 1.0 / (1.0 + std::exp(-1.0));
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(next.c.values()[j], f * s.c.values()[j], 1e-15);
    EXPECT_NEAR(next.h.values()[j], 0.5 * std::tanh(next.c.values()[j]), 1e-15);
  }
  auto zero = lstm_step(Tensor({1, 2}), lstm_zero_state(1, 3), cell);
  for (double v : zero.h.values()) EXPECT_EQ(v, 0.0);
  for (double v : zero.c.values()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, EightStepGradientMatchesFiniteDifferences) {
  ParamStore store;
  Rng rng(7);
  auto cell = make_lstm(store, "l", 3, 5, rng);
  for (double& v : cell.ln_gain.values()) v = 0.5 + rng.uniform();
  for (double& v : cell.ln_bias.values()) v = rng.uniform() - 0.5;
  std::vector<Tensor> xs;
  for (int t = 0; t < 8; ++t) xs.push_back(random_tensor({2, 3}, rng));
  Tensor r = random_tensor({2, 5}, rng);
  auto f = [&] {
    LstmState s = lstm_zero_state(2, 5);
    for (const auto& x : xs) s = lstm_step(x, s, cell);
    return sum(mul(s.h, r));
  };
  std::vector<Tensor> ps{cell.w_input, cell.w_hidden, cell.ln_gain, cell.ln_bias};
  for (auto& p : ps) p.set_requires_grad(true);
  EXPECT_LT(max_rel_diff(tape_grads(f, ps), numeric_grads(f, ps), 1e-6), 1e-4);
}

namespace {

// Output[t] of a masked stack after changing input position `pos`.
bool output_changes(const MaskedConvStack& stack, const Tensor& x, std::size_t pos, std::size_t t) {
  const auto base = to_vec(masked_conv_forward(x, stack));
  Tensor y = x.clone();
  const std::size_t C = x.dim(1), L = x.dim(2);
  for (std::size_t c = 0; c < C; ++c) y.values()[c * L + pos] += 1.0;
  const auto moved = to_vec(masked_conv_forward(y, stack));
  const std::size_t O = stack.channels;
  for (std::size_t o = 0; o < O; ++o)
    if (base[o * L + t] != moved[o * L + t]) return true;
  return false;
}

MaskedConvStack random_stack(ParamStore& store, std::size_t n, Rng& rng) {
  auto stack = make_masked_stack(store, "m", n, 3, 6, rng);
  for (auto& layer : stack.layers) {
    for (double& v : layer.weight.values()) v = rng.uniform() - 0.5;
    for (double& v : layer.bias.values()) v = 0.5 + rng.uniform();  // keep ReLUs open
  }
  return stack;
}

}  // namespace

TEST(MaskedStack, ReceptiveFieldAndCausality) {
  Rng rng(8);
  for (std::size_t n : {1, 2, 3, 5}) {
    ParamStore store;
    auto stack = random_stack(store, n, rng);
    Tensor x = random_tensor({1, 3, 12}, rng);
    const std::size_t t = 10;
    for (std::size_t pos = 0; pos < 12; ++pos) {
      const bool inside = pos <= t && pos + n >= t;
      EXPECT_EQ(output_changes(stack, x, pos, t), inside) << "n=" << n << " pos=" << pos;
    }
  }
}

TEST(MaskedStack, PreviousStepOnlyKernel) {
  ParamStore store;
  Rng rng(9);
  auto stack = make_masked_stack(store, "m", 1, 1, 1, rng);
  auto w = stack.layers[0].weight.values();  // [1, 1, 2]: taps t-1, t
  w[0] = 1.0;
  w[1] = 0.0;
  Tensor x({1, 1, 5}, {1, 2, 3, 4, 5});
  EXPECT_EQ(to_vec(masked_conv_forward(x, stack)), (std::vector<double>{0, 1, 2, 3, 4}));
}

TEST(MaskedStack, ZeroLayersRejected) {
  ParamStore store;
  Rng rng(10);
  EXPECT_THROW(make_masked_stack(store, "m", 0, 2, 2, rng), ContractError);
}

TEST(ParamStore, DuplicateNameRejected) {
  ParamStore store;
  store.add_param("a", Tensor({1}));
  EXPECT_ANY_THROW(store.add_param("a", Tensor({1})));
}
