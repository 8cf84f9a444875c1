#include "tvae/models.hpp"

#include <cmath>
#include <numbers>

#include "tvae/errors.hpp"

namespace tvae {

Variant parse_variant(std::string_view name) {
  if (name == "conv_deconv") return Variant::kConvDeconv;
  if (name == "hybrid_lstm") return Variant::kHybridLstm;
  if (name == "hybrid_bytenet") return Variant::kHybridBytenet;
  if (name == "lstm_vae") return Variant::kLstmVae;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kConvDeconv: return "conv_deconv";
    case Variant::kHybridLstm: return "hybrid_lstm";
    case Variant::kHybridBytenet: return "hybrid_bytenet";
    case Variant::kLstmVae: return "lstm_vae";
  }
  return "?";
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("model spec: " + m); };
  if (vocab_size <= static_cast<std::size_t>(kNumReserved)) fail("vocabulary too small");
  if (seq_len == 0 || latent_dim == 0 || embed_dim == 0) fail("sizes must be positive");
  if (alpha < 0.0) fail("alpha must be >= 0");
  if (input_dropout < 0.0 || input_dropout > 1.0) fail("input dropout must lie in [0, 1]");
  if (has_conv_encoder()) {
    if (encoder_channels.empty()) fail("at least one encoder layer required");
    for (auto c : encoder_channels) {
      if (c == 0) fail("encoder channels must be positive");
    }
    if (kernel_size == 0 || stride < 1) fail("kernel and stride must be positive");
    std::size_t unit = 1;
    for (std::size_t i = 0; i < encoder_channels.size(); ++i) unit *= stride;
    if (seq_len % unit != 0) {
      fail("sequence length " + std::to_string(seq_len) + " is not divisible by " +
           std::to_string(unit));
    }
  }
  if (variant == Variant::kHybridBytenet && bytenet_layers == 0) {
    fail("the ByteNet decoder needs at least one masked layer");
  }
  if ((variant == Variant::kHybridLstm || variant == Variant::kLstmVae) && lstm_hidden == 0) {
    fail("LSTM hidden size must be positive");
  }
  if (variant == Variant::kConvDeconv && input_dropout != 0.0) {
    fail("conv_deconv has no decoder history to drop");
  }
}

LossBreakdown total_loss(double rec_nll, double kl, double aux_nll, double kl_weight, double alpha,
                         double mean_length) {
  LossBreakdown l;
  l.rec_nll = rec_nll;
  l.kl = kl;
  l.aux_nll = aux_nll;
  l.kl_weight = kl_weight;
  l.alpha = alpha;
  l.j_vae = rec_nll + kl_weight * kl;
  l.j_hybrid = l.j_vae + alpha * aux_nll;
  l.bpc = rec_nll / (mean_length * std::numbers::ln2);
  l.kl_bpc = kl / (mean_length * std::numbers::ln2);
  return l;
}

Tensor reparameterize(const LatentPosterior& posterior, const Tensor& noise) {
  if (noise.shape() != posterior.mu.shape()) {
    throw DimensionError("reparameterize: noise " + shape_str(noise.shape()) + " for posterior " +
                         shape_str(posterior.mu.shape()));
  }
  return add(posterior.mu, mul(exp(scale(posterior.logvar, 0.5)), noise));
}

Tensor kl_divergence(const LatentPosterior& posterior) {
  const Tensor& mu = posterior.mu;
  const Tensor& lv = posterior.logvar;
  Tensor terms = add_scalar(sub(add(mul(mu, mu), exp(lv)), lv), -1.0);
  return scale(sum(terms), 0.5 / static_cast<double>(mu.dim(0)));
}

Tensor reconstruction_nll(const Tensor& logits, const IntTensor& targets,
                          std::span<const double> mask) {
  if (logits.rank() != 3 || targets.shape.size() != 2 || logits.dim(0) != targets.shape[0] ||
      logits.dim(1) != targets.shape[1]) {
    throw DimensionError("reconstruction_nll: logits " + shape_str(logits.shape()) +
                         " for targets " + shape_str(targets.shape));
  }
  const std::size_t batch = logits.dim(0), length = logits.dim(1), vocab = logits.dim(2);
  Tensor flat = reshape(logits, {batch * length, vocab});
  return scale(cross_entropy(flat, targets.data, mask), 1.0 / static_cast<double>(batch));
}

// ---- model ----

VaeModel::VaeModel(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(init_seed);
  const std::size_t vocab = spec_.vocab_size, emb = spec_.embed_dim, latent = spec_.latent_dim;
  embedding_ = store_.add_param("embedding", uniform_tensor({vocab, emb}, std::sqrt(1.0 / emb), rng));

  if (spec_.has_conv_encoder()) {
    const auto& ch = spec_.encoder_channels;
    const std::size_t depth = ch.size();
    std::size_t in = emb;
    for (std::size_t i = 0; i < depth; ++i) {
      const std::string name = "encoder.conv" + std::to_string(i);
      enc_convs_.push_back(make_conv1d(store_, name, in, ch[i], spec_.kernel_size, spec_.stride, rng));
      enc_norms_.push_back(make_batchnorm(store_, name + ".bn", ch[i]));
      in = ch[i];
    }
    std::size_t top_len = spec_.seq_len;
    for (std::size_t i = 0; i < depth; ++i) top_len /= spec_.stride;
    const std::size_t flat = ch.back() * top_len;
    mu_head_ = make_linear(store_, "encoder.mu", flat, latent, rng);
    logvar_head_ = make_linear(store_, "encoder.logvar", flat, latent, rng);

    // Decoder mirrors the encoder with channels decreasing towards the output.
    z_to_map_ = make_linear(store_, "decoder.z_map", latent, flat, rng);
    in = ch.back();
    for (std::size_t i = 0; i < depth; ++i) {
      const std::size_t out = i + 1 < depth ? ch[depth - 2 - i] : ch.front();
      const std::string name = "decoder.deconv" + std::to_string(i);
      dec_deconvs_.push_back(make_deconv1d(store_, name, in, out, spec_.kernel_size, spec_.stride, rng));
      dec_norms_.push_back(make_batchnorm(store_, name + ".bn", out));
      in = out;
    }
    aux_head_ = make_linear(store_, "decoder.aux_head", ch.front(), vocab, rng);
  } else {
    enc_lstm_ = make_lstm(store_, "encoder.lstm", emb, spec_.lstm_hidden, rng);
    mu_head_ = make_linear(store_, "encoder.mu", spec_.lstm_hidden, latent, rng);
    logvar_head_ = make_linear(store_, "encoder.logvar", spec_.lstm_hidden, latent, rng);
  }

  switch (spec_.variant) {
    case Variant::kConvDeconv:
      break;
    case Variant::kHybridLstm:
      dec_lstm_ = make_lstm(store_, "decoder.lstm", spec_.encoder_channels.front() + emb,
                            spec_.lstm_hidden, rng);
      lm_out_ = make_linear(store_, "decoder.lm_head", spec_.lstm_hidden, vocab, rng);
      break;
    case Variant::kHybridBytenet:
      bytenet_ = make_masked_stack(store_, "decoder.bytenet", spec_.bytenet_layers,
                                   spec_.encoder_channels.front() + emb, spec_.bytenet_channels, rng);
      lm_out_ = make_linear(store_, "decoder.lm_head", spec_.bytenet_channels, vocab, rng);
      break;
    case Variant::kLstmVae:
      dec_lstm_ = make_lstm(store_, "decoder.lstm", emb + latent, spec_.lstm_hidden, rng);
      z_to_state_ = make_linear(store_, "decoder.z_state", latent, spec_.lstm_hidden, rng);
      lm_out_ = make_linear(store_, "decoder.lm_head", spec_.lstm_hidden, vocab, rng);
      break;
  }
}

Tensor VaeModel::embed_history(const IntTensor& history) const {
  if (history.shape.size() != 2 || history.shape[1] != spec_.seq_len) {
    throw ContractError("decoder history of shape " + shape_str(history.shape) +
                        " does not match model length " + std::to_string(spec_.seq_len));
  }
  return embedding(history, embedding_);
}

LatentPosterior VaeModel::encode(const IntTensor& x, Mode mode) {
  if (x.shape.size() != 2 || x.shape[1] != spec_.seq_len) {
    throw ContractError("encode: input of shape " + shape_str(x.shape) +
                        " does not match model length " + std::to_string(spec_.seq_len) +
                        (spec_.has_conv_encoder()
                             ? " (must be divisible by 2^" + std::to_string(spec_.encoder_depth()) + ")"
                             : std::string()));
  }
  const std::size_t batch = x.shape[0], length = x.shape[1];
  Tensor emb = embedding(x, embedding_);  // [B, L, E]
  Tensor top;
  if (spec_.has_conv_encoder()) {
    Tensor h = transpose(emb, {0, 2, 1});
    for (std::size_t i = 0; i < enc_convs_.size(); ++i) {
      h = relu(batchnorm_forward(conv1d_forward(h, enc_convs_[i]), enc_norms_[i], mode));
    }
    top = reshape(h, {batch, h.numel() / batch});
  } else {
    const std::size_t hidden = spec_.lstm_hidden;
    Tensor proj = reshape(matmul(reshape(emb, {batch * length, spec_.embed_dim}), enc_lstm_.w_input),
                          {batch, length, 4 * hidden});
    LstmState state = lstm_zero_state(batch, hidden);
    for (std::size_t t = 0; t < length; ++t) {
      state = lstm_step_projected(reshape(slice(proj, 1, t, t + 1), {batch, 4 * hidden}), state,
                                  enc_lstm_);
    }
    top = state.h;
  }
  return {linear(top, mu_head_), clamp(linear(top, logvar_head_), kLogvarMin, kLogvarMax)};
}

Tensor VaeModel::decode_features(const Tensor& z, Mode mode) {
  if (!spec_.has_conv_encoder()) throw ContractError("lstm_vae has no deconvolutional decoder");
  if (z.rank() != 2 || z.dim(1) != spec_.latent_dim) {
    throw DimensionError("decode: z of shape " + shape_str(z.shape()) + " for latent size " +
                         std::to_string(spec_.latent_dim));
  }
  const std::size_t batch = z.dim(0);
  const std::size_t top_channels = spec_.encoder_channels.back();
  Tensor h = linear(z, z_to_map_);
  h = relu(reshape(h, {batch, top_channels, h.dim(1) / top_channels}));
  for (std::size_t i = 0; i < dec_deconvs_.size(); ++i) {
    h = relu(batchnorm_forward(deconv1d_forward(h, dec_deconvs_[i]), dec_norms_[i], mode));
  }
  return h;
}

Tensor VaeModel::lm_head(const Tensor& hidden_seq) {
  const std::size_t batch = hidden_seq.dim(0), length = hidden_seq.dim(1);
  Tensor flat = reshape(hidden_seq, {batch * length, hidden_seq.dim(2)});
  return reshape(linear(flat, lm_out_), {batch, length, spec_.vocab_size});
}

Tensor VaeModel::aux_logits(const Tensor& features) {
  const std::size_t batch = features.dim(0), channels = features.dim(1), length = features.dim(2);
  Tensor flat = reshape(transpose(features, {0, 2, 1}), {batch * length, channels});
  return reshape(linear(flat, aux_head_), {batch, length, spec_.vocab_size});
}

Tensor VaeModel::decode_feedforward(const Tensor& z, Mode mode) {
  return aux_logits(decode_features(z, mode));
}

DecoderOutput VaeModel::decode_hybrid_lstm(const Tensor& z, const IntTensor& history, Mode mode) {
  if (spec_.variant != Variant::kHybridLstm) throw ContractError("model is not hybrid_lstm");
  Tensor features = decode_features(z, mode);
  const std::size_t batch = z.dim(0), length = spec_.seq_len, hidden = spec_.lstm_hidden;
  if (history.shape != Shape{batch, length}) {
    throw ContractError("decoder history " + shape_str(history.shape) + " does not match " +
                        shape_str({batch, length}));
  }
  Tensor inputs = concat({transpose(features, {0, 2, 1}), embed_history(history)}, 2);
  Tensor proj = reshape(matmul(reshape(inputs, {batch * length, inputs.dim(2)}), dec_lstm_.w_input),
                        {batch, length, 4 * hidden});
  LstmState state = lstm_zero_state(batch, hidden);
  std::vector<Tensor> outputs;
  outputs.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    state = lstm_step_projected(reshape(slice(proj, 1, t, t + 1), {batch, 4 * hidden}), state, dec_lstm_);
    outputs.push_back(reshape(state.h, {batch, 1, hidden}));
  }
  return {lm_head(concat(outputs, 1)), aux_logits(features)};
}

DecoderOutput VaeModel::decode_hybrid_bytenet(const Tensor& z, const IntTensor& history, Mode mode) {
  if (spec_.variant != Variant::kHybridBytenet) throw ContractError("model is not hybrid_bytenet");
  Tensor features = decode_features(z, mode);
  const std::size_t batch = z.dim(0), length = spec_.seq_len;
  if (history.shape != Shape{batch, length}) {
    throw ContractError("decoder history " + shape_str(history.shape) + " does not match " +
                        shape_str({batch, length}));
  }
  Tensor inputs = concat({features, transpose(embed_history(history), {0, 2, 1})}, 1);
  Tensor hidden = masked_conv_forward(inputs, bytenet_);
  return {lm_head(transpose(hidden, {0, 2, 1})), aux_logits(features)};
}

Tensor VaeModel::decode_lstm_vae(const Tensor& z, const IntTensor& history) {
  if (spec_.variant != Variant::kLstmVae) throw ContractError("model is not lstm_vae");
  const std::size_t batch = z.dim(0), length = spec_.seq_len, hidden = spec_.lstm_hidden;
  const std::size_t latent = spec_.latent_dim;
  if (history.shape != Shape{batch, length}) {
    throw ContractError("decoder history " + shape_str(history.shape) + " does not match " +
                        shape_str({batch, length}));
  }
  // z enters both through the initial state and at every input step.
  Tensor z_row = reshape(z, {batch, 1, latent});
  Tensor z_seq = concat(std::vector<Tensor>(length, z_row), 1);
  Tensor inputs = concat({embed_history(history), z_seq}, 2);
  Tensor proj = reshape(matmul(reshape(inputs, {batch * length, inputs.dim(2)}), dec_lstm_.w_input),
                        {batch, length, 4 * hidden});
  LstmState state{tanh(linear(z, z_to_state_)), Tensor(Shape{batch, hidden})};
  std::vector<Tensor> outputs;
  outputs.reserve(length);
  for (std::size_t t = 0; t < length; ++t) {
    state = lstm_step_projected(reshape(slice(proj, 1, t, t + 1), {batch, 4 * hidden}), state, dec_lstm_);
    outputs.push_back(reshape(state.h, {batch, 1, hidden}));
  }
  return lm_head(concat(outputs, 1));
}

DecoderOutput VaeModel::decode(const Tensor& z, const IntTensor& history, Mode mode) {
  switch (spec_.variant) {
    case Variant::kConvDeconv: return {decode_feedforward(z, mode), Tensor()};
    case Variant::kHybridLstm: return decode_hybrid_lstm(z, history, mode);
    case Variant::kHybridBytenet: return decode_hybrid_bytenet(z, history, mode);
    case Variant::kLstmVae: return {decode_lstm_vae(z, history), Tensor()};
  }
  throw ContractError("unknown variant");
}

IntTensor VaeModel::make_history(const IntTensor& targets, Mode mode, Rng* dropout_rng) const {
  IntTensor history = shift_right(targets);
  const double p = spec_.input_dropout;
  if (p >= 1.0 || (mode == Mode::kTrain && p > 0.0)) {
    if (p < 1.0 && !dropout_rng) throw ContractError("input dropout needs a random generator");
    Rng unused(0);
    apply_input_dropout(history, p, dropout_rng ? *dropout_rng : unused);
  }
  return history;
}

ForwardResult VaeModel::forward(const Batch& batch, const Tensor& noise, double kl_weight,
                                Mode mode, Rng* dropout_rng) {
  ForwardResult r;
  r.posterior = encode(batch.ids, mode);
  r.z = reparameterize(r.posterior, noise);
  IntTensor history;
  if (spec_.has_history()) history = make_history(batch.ids, mode, dropout_rng);
  r.decoded = decode(r.z, history, mode);
  r.rec = reconstruction_nll(r.decoded.lm_logits, batch.ids, batch.mask);
  r.kl = kl_divergence(r.posterior);
  r.objective = add(r.rec, scale(r.kl, kl_weight));
  double aux_value = 0.0;
  double alpha = 0.0;
  if (spec_.has_aux_pathway()) {
    r.aux = reconstruction_nll(r.decoded.aux_logits, batch.ids, batch.mask);
    r.objective = add(r.objective, scale(r.aux, spec_.alpha));
    aux_value = r.aux.item();
    alpha = spec_.alpha;
  }
  r.losses = total_loss(r.rec.item(), r.kl.item(), aux_value, kl_weight, alpha, batch.mean_length());
  return r;
}

// ---- greedy decoding ----

DecodeState VaeModel::begin_decode(const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != spec_.latent_dim) {
    throw DimensionError("decode: z of shape " + shape_str(z.shape()) + " for latent size " +
                         std::to_string(spec_.latent_dim));
  }
  DecodeState s;
  s.z = z;
  const std::size_t batch = z.dim(0), hidden = spec_.lstm_hidden;
  switch (spec_.variant) {
    case Variant::kConvDeconv:
      s.ff_logits = decode_feedforward(z, Mode::kEval);
      break;
    case Variant::kHybridLstm: {
      s.features = decode_features(z, Mode::kEval);
      const std::size_t channels = s.features.dim(1), length = s.features.dim(2);
      // Feature part of the gate projection; rows [0, C) of w_input.
      Tensor w_feat = slice(dec_lstm_.w_input, 0, 0, channels);
      Tensor feat_rows = reshape(transpose(s.features, {0, 2, 1}), {batch * length, channels});
      s.feature_proj = reshape(matmul(feat_rows, w_feat), {batch, length, 4 * hidden});
      s.lstm = lstm_zero_state(batch, hidden);
      break;
    }
    case Variant::kHybridBytenet:
      s.features = decode_features(z, Mode::kEval);
      s.history = IntTensor({batch, spec_.seq_len}, kPad);
      break;
    case Variant::kLstmVae:
      s.lstm = {tanh(linear(z, z_to_state_)), Tensor(Shape{batch, hidden})};
      break;
  }
  return s;
}

Tensor VaeModel::step_logits(DecodeState& s, std::span<const std::int32_t> previous) {
  const std::size_t batch = s.z.dim(0), t = s.t, hidden = spec_.lstm_hidden;
  if (t >= spec_.seq_len) throw ContractError("decoding past the model length");
  if (previous.size() != batch) throw DimensionError("one previous token per sequence required");
  const bool drop_all = spec_.input_dropout >= 1.0;
  IntTensor prev({batch, 1});
  for (std::size_t b = 0; b < batch; ++b) prev.data[b] = drop_all ? kDrop : previous[b];
  Tensor logits;
  switch (spec_.variant) {
    case Variant::kConvDeconv:
      logits = reshape(slice(s.ff_logits, 1, t, t + 1), {batch, spec_.vocab_size});
      break;
    case Variant::kHybridLstm: {
      const std::size_t channels = s.features.dim(1);
      Tensor w_emb = slice(dec_lstm_.w_input, 0, channels, channels + spec_.embed_dim);
      Tensor emb = reshape(embedding(prev, embedding_), {batch, spec_.embed_dim});
      Tensor proj = add(reshape(slice(s.feature_proj, 1, t, t + 1), {batch, 4 * hidden}),
                        matmul(emb, w_emb));
      s.lstm = lstm_step_projected(proj, s.lstm, dec_lstm_);
      logits = linear(s.lstm.h, lm_out_);
      break;
    }
    case Variant::kHybridBytenet: {
      for (std::size_t b = 0; b < batch; ++b) s.history.at(b, t) = prev.data[b];
      Tensor inputs = concat({s.features, transpose(embed_history(s.history), {0, 2, 1})}, 1);
      Tensor hidden_seq = masked_conv_forward(inputs, bytenet_);
      Tensor column = reshape(slice(hidden_seq, 2, t, t + 1), {batch, spec_.bytenet_channels});
      logits = linear(column, lm_out_);
      break;
    }
    case Variant::kLstmVae: {
      Tensor emb = reshape(embedding(prev, embedding_), {batch, spec_.embed_dim});
      s.lstm = lstm_step(concat({emb, s.z}, 1), s.lstm, dec_lstm_);
      logits = linear(s.lstm.h, lm_out_);
      break;
    }
  }
  ++s.t;
  return logits;
}

}  // namespace tvae
