#include "tvae/data.hpp"

#include <algorithm>
#include <regex>

#include "tvae/errors.hpp"

namespace tvae {

// ---- UTF-8 ----

std::vector<char32_t> utf8_decode(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t extra = 0;
    char32_t cp = 0;
    char32_t min_cp = 0;
    if (lead < 0x80) {
      out.push_back(lead);
      ++i;
      continue;
    } else if ((lead & 0xE0) == 0xC0) {
      extra = 1, cp = lead & 0x1F, min_cp = 0x80;
    } else if ((lead & 0xF0) == 0xE0) {
      extra = 2, cp = lead & 0x0F, min_cp = 0x800;
    } else if ((lead & 0xF8) == 0xF0) {
      extra = 3, cp = lead & 0x07, min_cp = 0x10000;
    } else {
      out.push_back(kInvalidCodepoint);
      ++i;
      continue;
    }
    std::size_t j = 1;
    for (; j <= extra && i + j < text.size(); ++j) {
      const auto cont = static_cast<unsigned char>(text[i + j]);
      if ((cont & 0xC0) != 0x80) break;
      cp = (cp << 6) | (cont & 0x3F);
    }
    if (j <= extra || cp < min_cp || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      out.push_back(kInvalidCodepoint);
      i += j;  // resynchronize on the first byte that broke the sequence
      continue;
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

std::string utf8_encode(std::u32string_view text) {
  std::string out;
  for (char32_t c : text) {
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
    } else if (c < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (c >> 6)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else if (c < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (c >> 12)));
      out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (c >> 18)));
      out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
    }
  }
  return out;
}

// ---- Vocab ----

Vocab Vocab::build(std::string_view corpus) {
  if (corpus.empty()) throw ContractError("cannot build a vocabulary from an empty corpus");
  std::vector<char32_t> chars = utf8_decode(corpus);
  std::erase(chars, kInvalidCodepoint);
  return from_chars(std::move(chars));
}

Vocab Vocab::from_chars(std::vector<char32_t> chars) {
  std::sort(chars.begin(), chars.end());
  chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
  if (!chars.empty() && chars.back() > 0x10FFFF) throw ContractError("vocabulary holds an invalid codepoint");
  Vocab v;
  v.chars_ = std::move(chars);
  return v;
}

std::int32_t Vocab::id_of(char32_t c) const {
  auto it = std::lower_bound(chars_.begin(), chars_.end(), c);
  if (it == chars_.end() || *it != c) return kUnk;
  return kNumReserved + static_cast<std::int32_t>(it - chars_.begin());
}

std::vector<std::int32_t> Vocab::encode(std::string_view text) const {
  std::vector<std::int32_t> ids;
  for (char32_t c : utf8_decode(text)) ids.push_back(id_of(c));
  return ids;
}

std::string Vocab::decode(std::span<const std::int32_t> ids) const {
  std::u32string out;
  for (std::int32_t id : ids) {
    if (id == kUnk) {
      out.push_back(U'\uFFFD');
    } else if (id >= kNumReserved && static_cast<std::size_t>(id) < size()) {
      out.push_back(chars_[id - kNumReserved]);
    }
  }
  return utf8_encode(out);
}

// ---- batching ----

double Batch::mean_length() const {
  double total = 0.0;
  for (auto l : lengths) total += static_cast<double>(l);
  return lengths.empty() ? 0.0 : total / static_cast<double>(lengths.size());
}

std::size_t padded_length(std::size_t length, std::size_t depth) {
  const std::size_t unit = std::size_t{1} << depth;
  return (length + unit - 1) / unit * unit;
}

std::vector<std::size_t> sample_window_starts(std::size_t corpus_len, std::size_t window_len,
                                              std::size_t count, Rng& rng) {
  if (window_len == 0) throw ContractError("window length must be positive");
  if (corpus_len < window_len) {
    throw ContractError("corpus of " + std::to_string(corpus_len) +
                        " characters is shorter than the window length " +
                        std::to_string(window_len));
  }
  std::vector<std::size_t> starts(count);
  for (auto& s : starts) s = rng.index(corpus_len - window_len + 1);
  return starts;
}

std::vector<std::vector<std::int32_t>> sample_windows(std::span<const std::int32_t> corpus,
                                                      std::size_t window_len, std::size_t count,
                                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::int32_t>> out;
  for (std::size_t s : sample_window_starts(corpus.size(), window_len, count, rng)) {
    out.emplace_back(corpus.begin() + s, corpus.begin() + s + window_len);
  }
  return out;
}

Batch make_window_batch(std::span<const std::int32_t> corpus, std::span<const std::size_t> starts,
                        std::size_t window_len, std::size_t seq_len) {
  if (seq_len < window_len) throw ContractError("sequence length shorter than the window");
  Batch batch;
  batch.ids = IntTensor({starts.size(), seq_len}, kPad);
  batch.mask.assign(starts.size() * seq_len, 0.0);
  for (std::size_t b = 0; b < starts.size(); ++b) {
    if (starts[b] + window_len > corpus.size()) throw ContractError("window crosses the corpus end");
    for (std::size_t t = 0; t < window_len; ++t) {
      batch.ids.at(b, t) = corpus[starts[b] + t];
      batch.mask[b * seq_len + t] = 1.0;
    }
    batch.lengths.push_back(window_len);
  }
  return batch;
}

Batch make_line_batch(std::span<const std::vector<std::int32_t>> lines,
                      std::span<const std::size_t> indices, std::size_t seq_len) {
  if (seq_len < 2) throw ContractError("line batches need sequence length >= 2");
  Batch batch;
  batch.ids = IntTensor({indices.size(), seq_len}, kPad);
  batch.mask.assign(indices.size() * seq_len, 0.0);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& line = lines[indices[b]];
    const std::size_t n = std::min(line.size(), seq_len - 1);
    for (std::size_t t = 0; t < n; ++t) batch.ids.at(b, t) = line[t];
    batch.ids.at(b, n) = kEos;
    for (std::size_t t = 0; t <= n; ++t) batch.mask[b * seq_len + t] = 1.0;
    batch.lengths.push_back(n + 1);
  }
  return batch;
}

IntTensor shift_right(const IntTensor& targets) {
  IntTensor out(targets.shape, kPad);
  const std::size_t rows = targets.shape[0], cols = targets.shape[1];
  for (std::size_t b = 0; b < rows; ++b) {
    out.at(b, 0) = kBos;
    for (std::size_t t = 1; t < cols; ++t) out.at(b, t) = targets.at(b, t - 1);
  }
  return out;
}

void apply_input_dropout(IntTensor& history, double p, Rng& rng) {
  if (p <= 0.0) return;
  if (p >= 1.0) {
    std::fill(history.data.begin(), history.data.end(), kDrop);
    return;
  }
  for (auto& id : history.data) {
    if (rng.uniform() < p) id = kDrop;
  }
}

// ---- text ----

std::string clean_tweet(std::string_view raw) {
  static const std::regex kUrl(R"((^|\s)(https?://|www\.)\S*)");
  static const std::regex kMention(R"((^|[^\w@])@\w+)");
  std::string text(raw);
  text = std::regex_replace(text, kUrl, "$1url");
  text = std::regex_replace(text, kMention, "$1@userid");
  return text;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_validation_line(std::string_view line) { return fnv1a64(line) % 100 == 0; }

// ---- synthetic corpora ----

Grammar parse_grammar(std::string_view name) {
  if (name == "repeat_pattern") return Grammar::kRepeatPattern;
  if (name == "two_topic") return Grammar::kTwoTopic;
  if (name == "balanced_parens") return Grammar::kBalancedParens;
  throw ConfigError("unknown grammar '" + std::string(name) + "'");
}

std::string grammar_name(Grammar g) {
  switch (g) {
    case Grammar::kRepeatPattern: return "repeat_pattern";
    case Grammar::kTwoTopic: return "two_topic";
    case Grammar::kBalancedParens: return "balanced_parens";
  }
  return "?";
}

// Mass of a topic's favoured half. High enough that a few characters of
// history identify the topic, so a decoder with a short window gains little
// from being told it.
constexpr double kFavouredMass = 0.95;

std::vector<double> two_topic_distribution(int topic, std::size_t alphabet_size) {
  if (alphabet_size < 2 || alphabet_size % 2 != 0) {
    throw ContractError("two_topic needs an even alphabet of at least 2 characters");
  }
  const std::size_t half = alphabet_size / 2;
  std::vector<double> p(alphabet_size);
  for (std::size_t i = 0; i < alphabet_size; ++i) {
    const bool favoured = (i < half) == (topic == 0);
    p[i] = (favoured ? kFavouredMass : 1.0 - kFavouredMass) / static_cast<double>(half);
  }
  return p;
}

std::vector<TopicLine> two_topic_lines(std::size_t count, std::size_t line_len,
                                       std::string_view alphabet, std::uint64_t seed) {
  if (line_len == 0) throw ContractError("two_topic line length must be positive");
  Rng rng(seed);
  const std::vector<double> dist[2] = {two_topic_distribution(0, alphabet.size()),
                                       two_topic_distribution(1, alphabet.size())};
  std::vector<TopicLine> lines(count);
  for (auto& line : lines) {
    line.topic = rng.uniform() < 0.5 ? 0 : 1;
    const auto& p = dist[line.topic];
    for (std::size_t t = 0; t < line_len; ++t) {
      double u = rng.uniform();
      std::size_t k = 0;
      while (k + 1 < p.size() && u >= p[k]) u -= p[k++];
      line.text.push_back(alphabet[k]);
    }
  }
  return lines;
}

namespace {

std::string repeat_pattern(const SynthSpec& spec) {
  const std::string alphabet = spec.alphabet.empty() ? "abcd" : spec.alphabet;
  const std::size_t period = spec.period == 0 ? alphabet.size() : spec.period;
  std::string text(spec.length, ' ');
  for (std::size_t i = 0; i < spec.length; ++i) text[i] = alphabet[(i % period) % alphabet.size()];
  return text;
}

std::string two_topic(const SynthSpec& spec) {
  const std::string alphabet = spec.alphabet.empty() ? "abcdefgh" : spec.alphabet;
  const std::size_t count = std::max<std::size_t>(1, spec.length / (spec.line_len + 1));
  std::string text;
  for (const auto& line : two_topic_lines(count, spec.line_len, alphabet, spec.seed)) {
    text += line.text;
    text += '\n';
  }
  return text;
}

// Space-separated words of balanced round/square brackets, nesting depth <= 6.
std::string balanced_parens(const SynthSpec& spec) {
  Rng rng(spec.seed);
  std::string text;
  while (text.size() < spec.length) {
    std::string stack;
    const std::size_t target = 2 + 2 * rng.index(8);
    std::size_t opened = 0;
    while (opened < target / 2 || !stack.empty()) {
      const bool can_open = opened < target / 2 && stack.size() < 6;
      if (can_open && (stack.empty() || rng.uniform() < 0.5)) {
        const char open = rng.uniform() < 0.5 ? '(' : '[';
        text.push_back(open);
        stack.push_back(open == '(' ? ')' : ']');
        ++opened;
      } else {
        text.push_back(stack.back());
        stack.pop_back();
      }
    }
    text.push_back(' ');
  }
  text.resize(spec.length);
  return text;
}

}  // namespace

std::string synth_corpus(const SynthSpec& spec) {
  if (spec.length == 0) throw ContractError("synthetic corpus length must be positive");
  switch (spec.grammar) {
    case Grammar::kRepeatPattern: return repeat_pattern(spec);
    case Grammar::kTwoTopic: return two_topic(spec);
    case Grammar::kBalancedParens: return balanced_parens(spec);
  }
  throw ConfigError("unknown grammar");
}

std::vector<std::string> synth_raw_tweets(std::size_t count, std::uint64_t seed) {
  static const char* kNames[] = {"anna", "bob_92", "carla", "dmitri", "emma_k", "fox"};
  static const char* kOpeners[] = {"thanks for the follow", "good morning", "i love this",
                                   "can't wait for tomorrow", "so happy today",
                                   "what a game", "miss you"};
  static const char* kTails[] = {"!!", " xx", " :)", "", " #happy", " #selfie"};
  static const char* kLinks[] = {"http://t.co/ab12", "https://t.co/Zx9", "www.example.com/p"};
  Rng rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::string t;
    const std::size_t mentions = rng.index(3);
    for (std::size_t m = 0; m < mentions; ++m) t += std::string("@") + kNames[rng.index(6)] + " ";
    t += kOpeners[rng.index(7)];
    t += kTails[rng.index(6)];
    if (rng.uniform() < 0.3) t += std::string(" ") + kLinks[rng.index(3)];
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace tvae
