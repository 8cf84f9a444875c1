#include "tvae/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tvae/errors.hpp"

namespace tvae {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string corpus_mode_name(CorpusMode m) { return m == CorpusMode::kWindows ? "windows" : "lines"; }

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

std::string join(const std::vector<std::size_t>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model.variant", [](TrainConfig& c, auto&, auto& v) { c.model.variant = parse_variant(v); }},
      {"model.seq_len", [](TrainConfig& c, auto& k, auto& v) { c.model.seq_len = parse_size(k, v); }},
      {"model.latent_dim", [](TrainConfig& c, auto& k, auto& v) { c.model.latent_dim = parse_size(k, v); }},
      {"model.embed_dim", [](TrainConfig& c, auto& k, auto& v) { c.model.embed_dim = parse_size(k, v); }},
      {"model.encoder_channels",
       [](TrainConfig& c, auto& k, auto& v) { c.model.encoder_channels = parse_list(k, v); }},
      {"model.kernel_size", [](TrainConfig& c, auto& k, auto& v) { c.model.kernel_size = parse_size(k, v); }},
      {"model.stride", [](TrainConfig& c, auto& k, auto& v) { c.model.stride = parse_size(k, v); }},
      {"model.lstm_hidden", [](TrainConfig& c, auto& k, auto& v) { c.model.lstm_hidden = parse_size(k, v); }},
      {"model.bytenet_layers",
       [](TrainConfig& c, auto& k, auto& v) { c.model.bytenet_layers = parse_size(k, v); }},
      {"model.bytenet_channels",
       [](TrainConfig& c, auto& k, auto& v) { c.model.bytenet_channels = parse_size(k, v); }},
      {"train.alpha", [](TrainConfig& c, auto& k, auto& v) { c.model.alpha = parse_double(k, v); }},
      {"train.input_dropout",
       [](TrainConfig& c, auto& k, auto& v) { c.model.input_dropout = parse_double(k, v); }},
      {"train.batch_size", [](TrainConfig& c, auto& k, auto& v) { c.batch_size = parse_size(k, v); }},
      {"train.max_steps", [](TrainConfig& c, auto& k, auto& v) { c.max_steps = parse_size(k, v); }},
      {"train.eval_interval", [](TrainConfig& c, auto& k, auto& v) { c.eval_interval = parse_size(k, v); }},
      {"train.checkpoint_interval",
       [](TrainConfig& c, auto& k, auto& v) { c.checkpoint_interval = parse_size(k, v); }},
      {"train.eval_examples", [](TrainConfig& c, auto& k, auto& v) { c.eval_examples = parse_size(k, v); }},
      {"train.sample_count", [](TrainConfig& c, auto& k, auto& v) { c.sample_count = parse_size(k, v); }},
      {"train.lr", [](TrainConfig& c, auto& k, auto& v) { c.lr = parse_double(k, v); }},
      {"train.lr_decay", [](TrainConfig& c, auto& k, auto& v) { c.lr_decay = parse_double(k, v); }},
      {"train.lr_decay_every",
       [](TrainConfig& c, auto& k, auto& v) { c.lr_decay_every = parse_size(k, v); }},
      {"train.anneal_steps", [](TrainConfig& c, auto& k, auto& v) { c.anneal_steps = parse_size(k, v); }},
      {"train.kl_weight_cap", [](TrainConfig& c, auto& k, auto& v) { c.kl_weight_cap = parse_double(k, v); }},
      {"train.grad_clip", [](TrainConfig& c, auto& k, auto& v) { c.grad_clip = parse_double(k, v); }},
      {"train.seed", [](TrainConfig& c, auto& k, auto& v) { c.seed = parse_u64(k, v); }},
      {"data.source",
       [](TrainConfig& c, auto& k, auto& v) {
         if (v != "synthetic" && v != "tweets" && v != "file") {
           throw ConfigError("key '" + k + "': expected synthetic, tweets or file, got '" + v + "'");
         }
         c.data.source = v;
       }},
      {"data.grammar", [](TrainConfig& c, auto&, auto& v) { c.data.grammar = parse_grammar(v); }},
      {"data.corpus_length",
       [](TrainConfig& c, auto& k, auto& v) { c.data.corpus_length = parse_size(k, v); }},
      {"data.period", [](TrainConfig& c, auto& k, auto& v) { c.data.period = parse_size(k, v); }},
      {"data.alphabet", [](TrainConfig& c, auto&, auto& v) { c.data.alphabet = v; }},
      {"data.line_len", [](TrainConfig& c, auto& k, auto& v) { c.data.line_len = parse_size(k, v); }},
      {"data.path", [](TrainConfig& c, auto&, auto& v) { c.data.path = v; }},
      {"data.clean_tweets", [](TrainConfig& c, auto& k, auto& v) { c.data.clean_tweets = parse_bool(k, v); }},
      {"data.mode",
       [](TrainConfig& c, auto& k, auto& v) {
         if (v == "windows") {
           c.data.mode = CorpusMode::kWindows;
         } else if (v == "lines") {
           c.data.mode = CorpusMode::kLines;
         } else {
           throw ConfigError("key '" + k + "': expected windows or lines, got '" + v + "'");
         }
       }},
      {"data.window_len", [](TrainConfig& c, auto& k, auto& v) { c.data.window_len = parse_size(k, v); }},
  };
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (batch_size < 2) fail("train.batch_size must be >= 2 (batch normalization)");
  if (max_steps == 0) fail("train.max_steps must be positive");
  if (eval_interval == 0) fail("train.eval_interval must be positive");
  if (eval_examples == 0) fail("train.eval_examples must be positive");
  if (!(lr > 0.0)) fail("train.lr must be positive");
  if (!(lr_decay > 0.0)) fail("train.lr_decay must be positive");
  if (kl_weight_cap < 0.0 || kl_weight_cap > 1.0) fail("train.kl_weight_cap must lie in [0, 1]");
  if (grad_clip < 0.0) fail("train.grad_clip must be >= 0");
  if (data.mode == CorpusMode::kWindows && data.window_len == 0) fail("data.window_len must be positive");
  if (data.source == "file" && data.path.empty()) fail("data.path is required when data.source = file");
  if (model.alpha < 0.0) fail("train.alpha must be >= 0");
  if (model.input_dropout < 0.0 || model.input_dropout > 1.0) fail("train.input_dropout must lie in [0, 1]");
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  std::stringstream ss{std::string(text)};
  std::string line;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    std::string value = trim(std::string_view(t).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

void apply_key_values(TrainConfig& config, const KeyValues& pairs) {
  const auto& table = setters();
  for (const auto& [key, value] : pairs) {
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(config, key, value);
  }
}

TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_key_values(base, parse_key_values(ss.str()));
  return base;
}

KeyValues model_key_values(const ModelSpec& m) {
  return {
      {"model.variant", variant_name(m.variant)},
      {"model.vocab_size", std::to_string(m.vocab_size)},
      {"model.seq_len", std::to_string(m.seq_len)},
      {"model.latent_dim", std::to_string(m.latent_dim)},
      {"model.embed_dim", std::to_string(m.embed_dim)},
      {"model.encoder_channels", join(m.encoder_channels)},
      {"model.kernel_size", std::to_string(m.kernel_size)},
      {"model.stride", std::to_string(m.stride)},
      {"model.lstm_hidden", std::to_string(m.lstm_hidden)},
      {"model.bytenet_layers", std::to_string(m.bytenet_layers)},
      {"model.bytenet_channels", std::to_string(m.bytenet_channels)},
  };
}

KeyValues config_to_key_values(const TrainConfig& c) {
  KeyValues kv = model_key_values(c.model);
  // vocab_size is derived from the corpus, never configured.
  std::erase_if(kv, [](const auto& p) { return p.first == "model.vocab_size"; });
  KeyValues rest = {
      {"train.alpha", format_double(c.model.alpha)},
      {"train.input_dropout", format_double(c.model.input_dropout)},
      {"train.batch_size", std::to_string(c.batch_size)},
      {"train.max_steps", std::to_string(c.max_steps)},
      {"train.eval_interval", std::to_string(c.eval_interval)},
      {"train.checkpoint_interval", std::to_string(c.checkpoint_interval)},
      {"train.eval_examples", std::to_string(c.eval_examples)},
      {"train.sample_count", std::to_string(c.sample_count)},
      {"train.lr", format_double(c.lr)},
      {"train.lr_decay", format_double(c.lr_decay)},
      {"train.lr_decay_every", std::to_string(c.lr_decay_every)},
      {"train.anneal_steps", std::to_string(c.anneal_steps)},
      {"train.kl_weight_cap", format_double(c.kl_weight_cap)},
      {"train.grad_clip", format_double(c.grad_clip)},
      {"train.seed", std::to_string(c.seed)},
      {"data.source", c.data.source},
      {"data.grammar", grammar_name(c.data.grammar)},
      {"data.corpus_length", std::to_string(c.data.corpus_length)},
      {"data.period", std::to_string(c.data.period)},
      {"data.alphabet", c.data.alphabet},
      {"data.line_len", std::to_string(c.data.line_len)},
      {"data.path", c.data.path},
      {"data.clean_tweets", c.data.clean_tweets ? "true" : "false"},
      {"data.mode", corpus_mode_name(c.data.mode)},
      {"data.window_len", std::to_string(c.data.window_len)},
  };
  kv.insert(kv.end(), rest.begin(), rest.end());
  return kv;
}

std::string config_to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_to_key_values(config)) {
    const bool needs_quotes = k == "data.alphabet" || k == "data.path";
    out += k + " = " + (needs_quotes ? quote(v) : v) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const TrainConfig& config) { return fnv1a64(config_to_text(config)); }

}  // namespace tvae
