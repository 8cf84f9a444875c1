#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tvae/rng.hpp"
#include "tvae/tensor.hpp"

namespace tvae {

enum class Mode { kTrain, kEval };

// Named, ordered collection of trainable parameters and non-trainable
// buffers (batch-norm running statistics). Layers hold handles into it, so
// writing values through the store updates the layers in place.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor add_param(const std::string& name, Tensor value);
  Tensor add_buffer(const std::string& name, Tensor value);

  const std::vector<Entry>& params() const { return params_; }
  const std::vector<Entry>& buffers() const { return buffers_; }
  // Params followed by buffers, in registration order.
  std::vector<Entry> all() const;

  const Tensor* find(const std::string& name) const;
  void zero_grad();
  std::size_t param_count() const;

 private:
  void check_new(const std::string& name) const;
  std::vector<Entry> params_;
  std::vector<Entry> buffers_;
};

Tensor uniform_tensor(Shape shape, double bound, Rng& rng);

// Affine map x [N, in] -> [N, out].
struct Linear {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   Rng& rng);
Tensor linear(const Tensor& x, const Linear& layer);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv1dLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_size = 0;
  std::size_t stride = 1;
  Tensor weight;  // [out, in, K]
  Tensor bias;    // [out]
};

// Transposed convolution. The weight layout [in, out, K] is that of the
// convolution it is the adjoint of, seen from the other side.
struct Deconv1dLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_size = 0;
  std::size_t stride = 1;
  Tensor weight;  // [in, out, K]
  Tensor bias;    // [out]
};

Conv1dLayer make_conv1d(ParamStore& store, const std::string& name, std::size_t in,
                        std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);
Deconv1dLayer make_deconv1d(ParamStore& store, const std::string& name, std::size_t in,
                            std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);

// "Same" padding: output length ceil(length / stride), extra padding on the
// right when the total is odd.
std::size_t same_output_length(std::size_t length, std::size_t stride);
std::size_t same_pad_left(std::size_t length, std::size_t kernel, std::size_t stride);

// x [B, C_in, L] -> [B, C_out, ceil(L / stride)]
Tensor conv1d_forward(const Tensor& x, const Conv1dLayer& layer);
// x [B, C_in, L] -> [B, C_out, L * stride], exact adjoint of conv1d_forward
// on length L * stride.
Tensor deconv1d_forward(const Tensor& x, const Deconv1dLayer& layer);

struct BatchNorm1d {
  std::size_t channels = 0;
  Tensor gain;
  Tensor bias;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

BatchNorm1d make_batchnorm(ParamStore& store, const std::string& name, std::size_t channels);
// Train mode normalizes with batch statistics over B x L and updates the
// running statistics (unbiased variance); eval mode uses running statistics.
Tensor batchnorm_forward(const Tensor& x, BatchNorm1d& bn, Mode mode);

// LSTM cell with layer normalization applied separately to each gate's
// pre-activation. Gate order in the 4H blocks: input, forget, output, cell.
struct LstmCell {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Tensor w_input;   // [D, 4H]
  Tensor w_hidden;  // [H, 4H]
  Tensor ln_gain;   // [4H]
  Tensor ln_bias;   // [4H]; forget block starts at 1
  double eps = 1e-5;
};

struct LstmState {
  Tensor h;  // [B, H]
  Tensor c;  // [B, H]
};

LstmCell make_lstm(ParamStore& store, const std::string& name, std::size_t input,
                   std::size_t hidden, Rng& rng);
LstmState lstm_zero_state(std::size_t batch, std::size_t hidden);
LstmState lstm_step(const Tensor& x_t, const LstmState& state, const LstmCell& cell);
// Same recurrence with the input term x_t * W_input already computed, so a
// whole sequence can be projected with one matmul.
LstmState lstm_step_projected(const Tensor& input_proj, const LstmState& state,
                              const LstmCell& cell);

// Stack of causal kernel-2 convolutions, each followed by ReLU. Output at
// time t sees inputs t - N .. t.
struct MaskedConvStack {
  std::size_t num_layers = 0;
  std::size_t in_channels = 0;
  std::size_t channels = 0;
  std::vector<Conv1dLayer> layers;
};

inline constexpr std::size_t kMaskedKernel = 2;

MaskedConvStack make_masked_stack(ParamStore& store, const std::string& name,
                                  std::size_t num_layers, std::size_t in_channels,
                                  std::size_t channels, Rng& rng);
Tensor masked_conv_forward(const Tensor& x, const MaskedConvStack& stack);

}  // namespace tvae
