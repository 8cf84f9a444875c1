#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tvae/data.hpp"
#include "tvae/layers.hpp"
#include "tvae/tensor.hpp"

namespace tvae {

enum class Variant { kConvDeconv, kHybridLstm, kHybridBytenet, kLstmVae };

Variant parse_variant(std::string_view name);
std::string variant_name(Variant v);

struct ModelSpec {
  Variant variant = Variant::kHybridLstm;
  std::size_t vocab_size = 0;
  // Model sequence length; a multiple of 2^depth for the convolutional variants.
  std::size_t seq_len = 32;
  std::size_t latent_dim = 64;
  std::size_t embed_dim = 16;
  std::vector<std::size_t> encoder_channels{32, 64, 128, 128, 128};
  std::size_t kernel_size = 3;
  std::size_t stride = 2;
  std::size_t lstm_hidden = 128;
  std::size_t bytenet_layers = 3;
  std::size_t bytenet_channels = 64;
  // Weight of the auxiliary (deconvolutional) reconstruction term.
  double alpha = 0.0;
  // Probability of replacing a decoder history token with DROP.
  double input_dropout = 0.0;

  bool has_conv_encoder() const { return variant != Variant::kLstmVae; }
  bool has_aux_pathway() const {
    return variant == Variant::kHybridLstm || variant == Variant::kHybridBytenet;
  }
  bool has_history() const { return variant != Variant::kConvDeconv; }
  std::size_t encoder_depth() const { return has_conv_encoder() ? encoder_channels.size() : 0; }
  void validate() const;
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

// Gaussian posterior q(z|x); sigma^2 = exp(logvar).
struct LatentPosterior {
  Tensor mu;      // [B, Z]
  Tensor logvar;  // [B, Z], clamped to [kLogvarMin, kLogvarMax]
};

struct DecoderOutput {
  Tensor lm_logits;   // [B, L, V]
  Tensor aux_logits;  // [B, L, V]; undefined when the variant has no aux pathway
};

// All per-example quantities are batch means in nats.
struct LossBreakdown {
  double rec_nll = 0.0;
  double kl = 0.0;
  double aux_nll = 0.0;
  double kl_weight = 0.0;
  double alpha = 0.0;
  double j_vae = 0.0;
  double j_hybrid = 0.0;
  double bpc = 0.0;
  double kl_bpc = 0.0;
};

// j_vae = rec + kl_weight * kl, j_hybrid = j_vae + alpha * aux. bpc and
// kl_bpc divide by mean_length * ln 2.
LossBreakdown total_loss(double rec_nll, double kl, double aux_nll, double kl_weight, double alpha,
                         double mean_length = 1.0);

// z = mu + exp(logvar / 2) * noise. The noise gets no gradient.
Tensor reparameterize(const LatentPosterior& posterior, const Tensor& noise);
// Batch mean of KL(q || N(0, I)) = 1/2 sum_j (mu^2 + sigma^2 - log sigma^2 - 1).
Tensor kl_divergence(const LatentPosterior& posterior);
// Batch mean of the summed per-position cross-entropy. An empty mask scores
// every position.
Tensor reconstruction_nll(const Tensor& logits, const IntTensor& targets,
                          std::span<const double> mask = {});

struct ForwardResult {
  Tensor objective;  // scalar j_hybrid, differentiable
  Tensor rec;
  Tensor kl;
  Tensor aux;        // undefined without aux pathway
  LossBreakdown losses;
  LatentPosterior posterior;
  Tensor z;
  DecoderOutput decoded;
};

// Incremental greedy-decoding state for one batch of latent codes.
struct DecodeState {
  Tensor z;
  Tensor features;       // deconv features [B, C, L] (conv variants)
  Tensor feature_proj;   // hybrid LSTM: features projected into gate space [B, L, 4H]
  Tensor ff_logits;      // conv_deconv logits [B, L, V]
  LstmState lstm;
  IntTensor history;     // hybrid ByteNet: history so far, PAD beyond t
  std::size_t t = 0;
};

class VaeModel {
 public:
  VaeModel(ModelSpec spec, std::uint64_t init_seed);
  VaeModel(const VaeModel&) = delete;
  VaeModel& operator=(const VaeModel&) = delete;
  VaeModel(VaeModel&&) = default;

  const ModelSpec& spec() const { return spec_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  LatentPosterior encode(const IntTensor& x, Mode mode);

  // z -> deconv features [B, C_0, L]
  Tensor decode_features(const Tensor& z, Mode mode);
  // Per-position vocabulary projection of deconv features -> [B, L, V].
  Tensor aux_logits(const Tensor& features);
  Tensor decode_feedforward(const Tensor& z, Mode mode);
  DecoderOutput decode_hybrid_lstm(const Tensor& z, const IntTensor& history, Mode mode);
  DecoderOutput decode_hybrid_bytenet(const Tensor& z, const IntTensor& history, Mode mode);
  Tensor decode_lstm_vae(const Tensor& z, const IntTensor& history);
  DecoderOutput decode(const Tensor& z, const IntTensor& history, Mode mode);

  // Decoder history for a batch: shifted targets with input dropout. Train
  // mode drops with probability p; eval mode only applies p >= 1.
  IntTensor make_history(const IntTensor& targets, Mode mode, Rng* dropout_rng) const;

  // encode -> reparameterize -> decode -> losses.
  ForwardResult forward(const Batch& batch, const Tensor& noise, double kl_weight, Mode mode,
                        Rng* dropout_rng);

  // Greedy decoding support (eval mode, no graph).
  DecodeState begin_decode(const Tensor& z);
  // Logits [B, V] for position state.t given the tokens emitted at t - 1
  // (BOS at t = 0); advances t.
  Tensor step_logits(DecodeState& state, std::span<const std::int32_t> previous);

 private:
  Tensor embed_history(const IntTensor& history) const;
  Tensor lm_head(const Tensor& hidden_seq);  // [B, L, C] -> [B, L, V]

  ModelSpec spec_;
  ParamStore store_;
  Tensor embedding_;
  // convolutional encoder / decoder
  std::vector<Conv1dLayer> enc_convs_;
  std::vector<BatchNorm1d> enc_norms_;
  std::vector<Deconv1dLayer> dec_deconvs_;
  std::vector<BatchNorm1d> dec_norms_;
  Linear z_to_map_;
  Linear aux_head_;
  // LSTM encoder (baseline)
  LstmCell enc_lstm_;
  // heads
  Linear mu_head_;
  Linear logvar_head_;
  // recurrent components
  LstmCell dec_lstm_;
  Linear z_to_state_;
  MaskedConvStack bytenet_;
  Linear lm_out_;
};

}  // namespace tvae
