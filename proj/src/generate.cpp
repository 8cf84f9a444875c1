#include "tvae/generate.hpp"

#include <algorithm>

#include "tvae/errors.hpp"
#include "tvae/rng.hpp"
#include "tvae/train.hpp"

namespace tvae {

Tensor sample_prior(std::size_t count, std::size_t latent_dim, std::uint64_t seed) {
  Rng rng(seed);
  Tensor z(Shape{count, latent_dim});
  for (double& v : z.values()) v = rng.normal();
  return z;
}

std::vector<std::vector<std::int32_t>> greedy_decode_ids(VaeModel& model, const Tensor& z,
                                                         std::size_t max_len, bool stop_at_eos) {
  if (max_len > model.spec().seq_len) {
    throw ContractError("max_len " + std::to_string(max_len) + " exceeds the model length " +
                        std::to_string(model.spec().seq_len));
  }
  const std::size_t batch = z.dim(0), vocab = model.spec().vocab_size;
  DecodeState state = model.begin_decode(z);
  std::vector<std::int32_t> previous(batch, kBos);
  std::vector<std::vector<std::int32_t>> out(batch);
  std::vector<bool> done(batch, false);
  for (std::size_t t = 0; t < max_len; ++t) {
    Tensor logits = model.step_logits(state, previous);
    auto v = logits.values();
    for (std::size_t b = 0; b < batch; ++b) {
      const auto row = v.subspan(b * vocab, vocab);
      const auto id = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      previous[b] = id;
      if (done[b]) continue;
      if (stop_at_eos && id == kEos) {
        done[b] = true;
      } else {
        out[b].push_back(id);
      }
    }
    if (stop_at_eos && std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
  }
  return out;
}

std::vector<std::string> greedy_decode(VaeModel& model, const Vocab& vocab, const Tensor& z,
                                       std::size_t max_len, bool stop_at_eos) {
  std::vector<std::string> texts;
  for (const auto& ids : greedy_decode_ids(model, z, max_len, stop_at_eos)) {
    texts.push_back(vocab.decode(ids));
  }
  return texts;
}

Tensor interpolation_points(const Tensor& z_a, const Tensor& z_b, std::size_t steps) {
  if (steps < 2) throw ContractError("interpolation needs at least 2 steps");
  if (z_a.numel() != z_b.numel()) throw DimensionError("interpolation endpoints differ in size");
  const std::size_t dim = z_a.numel();
  Tensor out(Shape{steps, dim});
  auto a = z_a.values(), b = z_b.values();
  auto o = out.values();
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
    for (std::size_t j = 0; j < dim; ++j) o[i * dim + j] = (1.0 - t) * a[j] + t * b[j];
  }
  return out;
}

std::vector<std::string> interpolate(VaeModel& model, const Vocab& vocab, const Tensor& z_a,
                                     const Tensor& z_b, std::size_t steps, std::size_t max_len,
                                     bool stop_at_eos) {
  return greedy_decode(model, vocab, interpolation_points(z_a, z_b, steps), max_len, stop_at_eos);
}

void decode_limits(const TrainConfig& config, const ModelSpec& spec, std::size_t& max_len,
                   bool& stop_at_eos) {
  if (config.data.mode == CorpusMode::kWindows) {
    max_len = std::min(config.data.window_len, spec.seq_len);
    stop_at_eos = false;
  } else {
    max_len = spec.seq_len;
    stop_at_eos = true;
  }
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  const CheckpointData data = read_checkpoint(checkpoint);
  LoadedModel out;
  out.config = config_from_checkpoint(data);
  out.vocab = vocab_from_checkpoint(data);
  ModelSpec spec = out.config.model;
  spec.vocab_size = out.vocab.size();
  out.model = std::make_unique<VaeModel>(spec, out.config.seed);
  load_parameters(*out.model, data);
  decode_limits(out.config, spec, out.max_len, out.stop_at_eos);
  return out;
}

}  // namespace tvae
