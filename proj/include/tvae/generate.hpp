#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tvae/config.hpp"
#include "tvae/data.hpp"
#include "tvae/models.hpp"

namespace tvae {

// count draws of z ~ N(0, I), shape [count, latent_dim].
Tensor sample_prior(std::size_t count, std::size_t latent_dim, std::uint64_t seed);

// Greedy decoding from z [B, Z]: starts from BOS and feeds back its own
// argmax. With stop_at_eos a row ends at its first EOS (not included);
// otherwise exactly max_len tokens are produced.
std::vector<std::vector<std::int32_t>> greedy_decode_ids(VaeModel& model, const Tensor& z,
                                                         std::size_t max_len, bool stop_at_eos);
std::vector<std::string> greedy_decode(VaeModel& model, const Vocab& vocab, const Tensor& z,
                                       std::size_t max_len, bool stop_at_eos);

// Rows (1 - t) z_a + t z_b for t = 0, 1/(steps-1), ..., 1. z_a and z_b are
// [Z] or [1, Z].
Tensor interpolation_points(const Tensor& z_a, const Tensor& z_b, std::size_t steps);
std::vector<std::string> interpolate(VaeModel& model, const Vocab& vocab, const Tensor& z_a,
                                     const Tensor& z_b, std::size_t steps, std::size_t max_len,
                                     bool stop_at_eos);

// A trained model restored from a checkpoint, ready for decoding.
struct LoadedModel {
  TrainConfig config;
  Vocab vocab;
  std::unique_ptr<VaeModel> model;
  std::size_t max_len = 0;
  bool stop_at_eos = false;
};

LoadedModel load_model(const std::filesystem::path& checkpoint);
// Decoding limits for a config: window corpora emit exactly window_len
// characters, line corpora stop at EOS.
void decode_limits(const TrainConfig& config, const ModelSpec& spec, std::size_t& max_len,
                   bool& stop_at_eos);

}  // namespace tvae
