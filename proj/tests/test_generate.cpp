#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tvae/errors.hpp"
#include "tvae/generate.hpp"

using namespace tvae;
using namespace tvae::testing;

namespace {

ModelSpec spec_for(Variant v, std::size_t vocab) {
  ModelSpec s;
  s.variant = v;
  s.vocab_size = vocab;
  s.seq_len = 8;
  s.latent_dim = 3;
  s.embed_dim = 4;
  s.encoder_channels = {5, 6};
  s.lstm_hidden = 6;
  s.bytenet_layers = 2;
  s.bytenet_channels = 6;
  return s;
}

}  // namespace

TEST(Prior, MomentsAtOneHundredThousandDraws) {
  const std::size_t n = 100000, z = 4;
  Tensor s = sample_prior(n, z, 11);
  for (std::size_t j = 0; j < z; ++j) {
    double mean = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) mean += s.values()[i * z + j];
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) sq += std::pow(s.values()[i * z + j] - mean, 2);
    EXPECT_LT(std::abs(mean), 0.02);
    EXPECT_NEAR(sq / (n - 1), 1.0, 0.03);
  }
  EXPECT_EQ(to_vec(sample_prior(3, 4, 5)), to_vec(sample_prior(3, 4, 5)));
}

TEST(Greedy, DeterministicAndBatchInvariant) {
  auto vocab = Vocab::build("abcd");
  for (Variant v : {Variant::kConvDeconv, Variant::kHybridLstm, Variant::kHybridBytenet,
                    Variant::kLstmVae}) {
    VaeModel m(spec_for(v, vocab.size()), 3);
    Tensor z = sample_prior(4, 3, 1);
    auto a = greedy_decode_ids(m, z, 8, false);
    EXPECT_EQ(a, greedy_decode_ids(m, z, 8, false)) << variant_name(v);
    for (std::size_t i = 0; i < 4; ++i) {
      Tensor row({1, 3}, std::vector<double>(z.values().begin() + 3 * i, z.values().begin() + 3 * i + 3));
      EXPECT_EQ(greedy_decode_ids(m, row, 8, false)[0], a[i]) << variant_name(v);
    }
  }
}

TEST(Greedy, FeedForwardIsPositionwiseArgmax) {
  VaeModel m(spec_for(Variant::kConvDeconv, 9), 4);
  Tensor z = sample_prior(2, 3, 2);
  auto ids = greedy_decode_ids(m, z, 8, false);
  auto logits = to_vec(m.decode_feedforward(z, Mode::kEval));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 8; ++t) {
      const double* row = logits.data() + (b * 8 + t) * 9;
      EXPECT_EQ(ids[b][t], std::max_element(row, row + 9) - row);
    }
}

TEST(Greedy, FavouredCharacterEverywhere) {
  auto vocab = Vocab::build("ab");
  VaeModel m(spec_for(Variant::kConvDeconv, vocab.size()), 5);
  Tensor w = *m.store().find("decoder.aux_head.weight");
  Tensor b = *m.store().find("decoder.aux_head.bias");
  for (double& x : w.values()) x = 0;
  b.values()[vocab.id_of(U'a')] = 5.0;
  EXPECT_EQ(greedy_decode(m, vocab, sample_prior(1, 3, 0), 8, false)[0], "aaaaaaaa");
}

TEST(Greedy, StopsAtEos) {
  auto vocab = Vocab::build("ab");
  VaeModel m(spec_for(Variant::kHybridBytenet, vocab.size()), 6);
  Tensor w = *m.store().find("decoder.lm_head.weight");
  Tensor b = *m.store().find("decoder.lm_head.bias");
  for (double& x : w.values()) x = 0;
  b.values()[kEos] = 5.0;
  auto ids = greedy_decode_ids(m, sample_prior(2, 3, 0), 8, true);
  EXPECT_TRUE(ids[0].empty());
  EXPECT_EQ(greedy_decode_ids(m, sample_prior(1, 3, 0), 8, false)[0].size(), 8u);
  EXPECT_THROW(greedy_decode_ids(m, sample_prior(1, 3, 0), 9, false), ContractError);
}

TEST(Interpolation, EndpointsAndMidpoint) {
  auto vocab = Vocab::build("abcdef");
  VaeModel m(spec_for(Variant::kHybridLstm, vocab.size()), 7);
  Tensor ends = sample_prior(2, 3, 3);
  Tensor za({3}, std::vector<double>(ends.values().begin(), ends.values().begin() + 3));
  Tensor zb({3}, std::vector<double>(ends.values().begin() + 3, ends.values().end()));
  auto texts = interpolate(m, vocab, za, zb, 5, 8, false);
  ASSERT_EQ(texts.size(), 5u);
  EXPECT_EQ(texts.front(), greedy_decode(m, vocab, reshape(za, {1, 3}), 8, false)[0]);
  EXPECT_EQ(texts.back(), greedy_decode(m, vocab, reshape(zb, {1, 3}), 8, false)[0]);
  auto two = interpolate(m, vocab, za, zb, 2, 8, false);
  EXPECT_EQ(two, (std::vector<std::string>{texts.front(), texts.back()}));
  auto pts = to_vec(interpolation_points(za, zb, 3));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(pts[3 + j], (za.values()[j] + zb.values()[j]) / 2);
  EXPECT_THROW(interpolation_points(za, zb, 1), ContractError);
}
