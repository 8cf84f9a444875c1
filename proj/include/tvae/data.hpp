#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tvae/rng.hpp"
#include "tvae/tensor.hpp"

namespace tvae {

// Reserved token ids, always first in every vocabulary.
inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kEos = 2;
inline constexpr std::int32_t kDrop = 3;
inline constexpr std::int32_t kUnk = 4;
inline constexpr std::int32_t kNumReserved = 5;

// Marks a malformed UTF-8 sequence in decoded text.
inline constexpr char32_t kInvalidCodepoint = 0x110000;

std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);

class Vocab {
 public:
  Vocab() = default;
  // All characters of the corpus in codepoint order after the reserved tokens.
  static Vocab build(std::string_view corpus);
  static Vocab from_chars(std::vector<char32_t> chars);

  std::size_t size() const { return kNumReserved + chars_.size(); }
  const std::vector<char32_t>& chars() const { return chars_; }

  std::int32_t id_of(char32_t c) const;
  std::vector<std::int32_t> encode(std::string_view text) const;
  // Reserved tokens are dropped, except UNK which becomes U+FFFD.
  std::string decode(std::span<const std::int32_t> ids) const;

  bool operator==(const Vocab& other) const { return chars_ == other.chars_; }

 private:
  std::vector<char32_t> chars_;
};

// Fixed-length model input. ids are [B, L]; mask has one weight per position
// (1 for real characters and EOS, 0 for padding).
struct Batch {
  IntTensor ids;
  std::vector<double> mask;
  std::vector<std::size_t> lengths;

  std::size_t batch_size() const { return ids.shape[0]; }
  std::size_t seq_len() const { return ids.shape[1]; }
  // Mean number of scored positions per example.
  double mean_length() const;
};

// Smallest multiple of 2^depth that is >= length.
std::size_t padded_length(std::size_t length, std::size_t depth);

// Uniform window starts in [0, corpus_len - window_len].
std::vector<std::size_t> sample_window_starts(std::size_t corpus_len, std::size_t window_len,
                                              std::size_t count, Rng& rng);
std::vector<std::vector<std::int32_t>> sample_windows(std::span<const std::int32_t> corpus,
                                                      std::size_t window_len, std::size_t count,
                                                      std::uint64_t seed);

// Windows of running text, padded with PAD up to seq_len.
Batch make_window_batch(std::span<const std::int32_t> corpus, std::span<const std::size_t> starts,
                        std::size_t window_len, std::size_t seq_len);
// One line per example: the line (truncated to seq_len - 1), EOS, then PAD.
Batch make_line_batch(std::span<const std::vector<std::int32_t>> lines,
                      std::span<const std::size_t> indices, std::size_t seq_len);

// Decoder history: targets shifted right by one with BOS at position 0.
IntTensor shift_right(const IntTensor& targets);
// Replaces each history token by DROP with probability p; p >= 1 replaces
// all of them without consuming randomness.
void apply_input_dropout(IntTensor& history, double p, Rng& rng);

// Mentions become "@userid", links become "url"; whitespace is preserved.
std::string clean_tweet(std::string_view raw);

std::vector<std::string> split_lines(std::string_view text);
std::uint64_t fnv1a64(std::string_view bytes);
// Deterministic 99/1 line split: a line is held out when its hash is 0 mod 100.
bool is_validation_line(std::string_view line);

enum class Grammar { kRepeatPattern, kTwoTopic, kBalancedParens };

Grammar parse_grammar(std::string_view name);
std::string grammar_name(Grammar g);

struct SynthSpec {
  Grammar grammar = Grammar::kRepeatPattern;
  std::size_t length = 10000;
  std::uint64_t seed = 0;
  // repeat_pattern: the pattern is the first `period` characters of the
  // alphabet, cycled. 0 means the whole alphabet.
  std::size_t period = 0;
  std::string alphabet;  // empty selects the grammar default
  // two_topic: characters per line.
  std::size_t line_len = 24;
};

struct TopicLine {
  std::string text;
  int topic = 0;
};

// Each line is drawn i.i.d. from one of two unigram distributions over the
// alphabet that put 95% of their mass on opposite halves.
std::vector<TopicLine> two_topic_lines(std::size_t count, std::size_t line_len,
                                       std::string_view alphabet, std::uint64_t seed);
std::vector<double> two_topic_distribution(int topic, std::size_t alphabet_size);

std::string synth_corpus(const SynthSpec& spec);

// Tweet-like raw lines with mentions and links, for the tweet demo.
std::vector<std::string> synth_raw_tweets(std::size_t count, std::uint64_t seed);

}  // namespace tvae
