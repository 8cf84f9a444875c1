#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "test_util.hpp"
#include "tvae/data.hpp"
#include "tvae/errors.hpp"

using namespace tvae;

TEST(Vocab, ReservedTokensFirst) {
  auto v = Vocab::build("ab");
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.id_of(U'a'), 5);
  EXPECT_EQ(v.id_of(U'b'), 6);
  EXPECT_EQ(v.encode("ba"), (std::vector<std::int32_t>{6, 5}));
  EXPECT_EQ(v.decode(v.encode("ba")), "ba");
  EXPECT_EQ(v.encode("c"), (std::vector<std::int32_t>{kUnk}));
}

TEST(Vocab, Utf8AndMalformedBytes) {
  auto v = Vocab::build("h\xc3\xa9");  // h, e-acute
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.decode(v.encode("\xc3\xa9h")), "\xc3\xa9h");
  EXPECT_EQ(v.encode("\xff")[0], kUnk);
  EXPECT_EQ(v.decode(std::vector<std::int32_t>{kUnk}), "\xef\xbf\xbd");
}

TEST(Windows, SingleWindowAndBounds) {
  Rng rng(1);
  auto starts = sample_window_starts(10, 10, 5, rng);
  for (auto s : starts) EXPECT_EQ(s, 0u);
  auto many = sample_window_starts(100, 30, 1000, rng);
  for (auto s : many) EXPECT_LE(s + 30, 100u);
}

TEST(Windows, DeterministicUnderSeed) {
  std::vector<std::int32_t> corpus(200);
  for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i] = static_cast<std::int32_t>(5 + i % 7);
  EXPECT_EQ(sample_windows(corpus, 12, 9, 42), sample_windows(corpus, 12, 9, 42));
}

TEST(Batches, LineBatchPadsAndMasks) {
  std::vector<std::vector<std::int32_t>> lines{{5, 6, 7}, {8}};
  std::vector<std::size_t> idx{0, 1};
  auto b = make_line_batch(lines, idx, 6);
  EXPECT_EQ(b.ids.data, (std::vector<std::int32_t>{5, 6, 7, kEos, kPad, kPad, 8, kEos, kPad, kPad, kPad, kPad}));
  EXPECT_EQ(b.mask, (std::vector<double>{1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0}));
  EXPECT_DOUBLE_EQ(b.mean_length(), 3.0);
  auto h = shift_right(b.ids);
  EXPECT_EQ(h.at(0, 0), kBos);
  EXPECT_EQ(h.at(0, 1), 5);
}

TEST(Batches, PaddedLength) {
  EXPECT_EQ(padded_length(33, 5), 64u);
  EXPECT_EQ(padded_length(32, 5), 32u);
  EXPECT_EQ(padded_length(7, 0), 7u);
}

TEST(Dropout, FullDropoutReplacesEverything) {
  IntTensor h({2, 3});
  h.data = {1, 5, 6, 1, 7, 8};
  Rng rng(3);
  const auto before = rng.state();
  apply_input_dropout(h, 1.0, rng);
  for (auto id : h.data) EXPECT_EQ(id, kDrop);
  EXPECT_EQ(rng.state(), before);
}

TEST(Tweets, CleaningRules) {
  EXPECT_EQ(clean_tweet("@john hi http://t.co/x"), "@userid hi url");
  EXPECT_EQ(clean_tweet("no mentions here"), "no mentions here");
  EXPECT_EQ(clean_tweet("@a @b"), "@userid @userid");
}

TEST(Synthetic, RepeatPattern) {
  SynthSpec s;
  s.grammar = Grammar::kRepeatPattern;
  s.length = 12;
  s.period = 4;
  s.alphabet = "abcd";
  EXPECT_EQ(synth_corpus(s), "abcdabcdabcd");
}

TEST(Synthetic, DeterministicAndGrammarNames) {
  for (auto g : {Grammar::kRepeatPattern, Grammar::kTwoTopic, Grammar::kBalancedParens}) {
    SynthSpec s;
    s.grammar = g;
    s.length = 500;
    s.seed = 9;
    EXPECT_EQ(synth_corpus(s), synth_corpus(s));
    EXPECT_EQ(parse_grammar(grammar_name(g)), g);
  }
  EXPECT_THROW(parse_grammar("nope"), ConfigError);
}

TEST(Synthetic, TwoTopicsDifferInTotalVariation) {
  const std::string alphabet = "abcdefgh";
  auto lines = two_topic_lines(4000, 24, alphabet, 5);
  std::map<char, double> counts[2];
  double totals[2] = {0, 0};
  for (const auto& l : lines) {
    for (char c : l.text) counts[l.topic][c] += 1;
    totals[l.topic] += static_cast<double>(l.text.size());
  }
  double tv = 0;
  for (char c : alphabet) tv += std::abs(counts[0][c] / totals[0] - counts[1][c] / totals[1]);
  EXPECT_GT(tv / 2, 0.5);
}

TEST(Splits, HashedValidationSplitIsStable) {
  std::size_t held = 0;
  for (int i = 0; i < 20000; ++i) held += is_validation_line("line " + std::to_string(i));
  EXPECT_GT(held, 100u);
  EXPECT_LT(held, 300u);
  EXPECT_EQ(is_validation_line("abc"), is_validation_line("abc"));
}
