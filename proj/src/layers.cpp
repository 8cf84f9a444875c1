#include "tvae/layers.hpp"

#include <algorithm>
#include <cmath>

#include "tvae/errors.hpp"

namespace tvae {

// ---- ParamStore ----

void ParamStore::check_new(const std::string& name) const {
  if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
}

Tensor ParamStore::add_param(const std::string& name, Tensor value) {
  check_new(name);
  value.set_requires_grad(true);
  params_.emplace_back(name, value);
  return value;
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor value) {
  check_new(name);
  buffers_.emplace_back(name, value);
  return value;
}

std::vector<ParamStore::Entry> ParamStore::all() const {
  std::vector<Entry> out = params_;
  out.insert(out.end(), buffers_.begin(), buffers_.end());
  return out;
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (const auto* list : {&params_, &buffers_}) {
    for (const auto& [n, t] : *list) {
      if (n == name) return &t;
    }
  }
  return nullptr;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::size_t ParamStore::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

// ---- Linear ----

Linear make_linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                   Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  Linear l;
  l.in_features = in;
  l.out_features = out;
  l.weight = store.add_param(name + ".weight", uniform_tensor({in, out}, bound, rng));
  l.bias = store.add_param(name + ".bias", Tensor(Shape{out}));
  return l;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Tensor linear(const Tensor& x, const Linear& layer) { return linear(x, layer.weight, layer.bias); }

// ---- convolutions ----

std::size_t same_output_length(std::size_t length, std::size_t stride) {
  return (length + stride - 1) / stride;
}

std::size_t same_pad_left(std::size_t length, std::size_t kernel, std::size_t stride) {
  const std::size_t out = same_output_length(length, stride);
  const std::size_t span = (out - 1) * stride + kernel;
  const std::size_t total = span > length ? span - length : 0;
  return total / 2;
}

Conv1dLayer make_conv1d(ParamStore& store, const std::string& name, std::size_t in,
                        std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng) {
  if (in == 0 || out == 0 || kernel == 0 || stride == 0) {
    throw ContractError("conv1d layer '" + name + "': sizes must be positive");
  }
  const double bound = std::sqrt(1.0 / static_cast<double>(in * kernel));
  Conv1dLayer l{in, out, kernel, stride, {}, {}};
  l.weight = store.add_param(name + ".weight", uniform_tensor({out, in, kernel}, bound, rng));
  l.bias = store.add_param(name + ".bias", Tensor(Shape{out}));
  return l;
}

Deconv1dLayer make_deconv1d(ParamStore& store, const std::string& name, std::size_t in,
                            std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng) {
  if (in == 0 || out == 0 || kernel == 0 || stride == 0) {
    throw ContractError("deconv1d layer '" + name + "': sizes must be positive");
  }
  const double bound = std::sqrt(1.0 / static_cast<double>(in * kernel));
  Deconv1dLayer l{in, out, kernel, stride, {}, {}};
  l.weight = store.add_param(name + ".weight", uniform_tensor({in, out, kernel}, bound, rng));
  l.bias = store.add_param(name + ".bias", Tensor(Shape{out}));
  return l;
}

Tensor conv1d_forward(const Tensor& x, const Conv1dLayer& layer) {
  if (x.rank() != 3 || x.dim(1) != layer.in_channels) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " for layer with " +
                         std::to_string(layer.in_channels) + " input channels");
  }
  const std::size_t length = x.dim(2);
  return conv1d(x, layer.weight, layer.bias, layer.stride,
                same_pad_left(length, layer.kernel_size, layer.stride),
                same_output_length(length, layer.stride));
}

Tensor deconv1d_forward(const Tensor& x, const Deconv1dLayer& layer) {
  if (x.rank() != 3 || x.dim(1) != layer.in_channels) {
    throw DimensionError("deconv1d: input " + shape_str(x.shape()) + " for layer with " +
                         std::to_string(layer.in_channels) + " input channels");
  }
  const std::size_t out_len = x.dim(2) * layer.stride;
  return conv_transpose1d(x, layer.weight, layer.bias, layer.stride,
                          same_pad_left(out_len, layer.kernel_size, layer.stride), out_len);
}

// ---- batch norm ----

BatchNorm1d make_batchnorm(ParamStore& store, const std::string& name, std::size_t channels) {
  BatchNorm1d bn;
  bn.channels = channels;
  bn.gain = store.add_param(name + ".gain", Tensor(Shape{channels}, 1.0));
  bn.bias = store.add_param(name + ".bias", Tensor(Shape{channels}));
  bn.running_mean = store.add_buffer(name + ".running_mean", Tensor(Shape{channels}));
  bn.running_var = store.add_buffer(name + ".running_var", Tensor(Shape{channels}, 1.0));
  return bn;
}

Tensor batchnorm_forward(const Tensor& x, BatchNorm1d& bn, Mode mode) {
  if (mode == Mode::kEval) {
    return batch_norm_eval(x, bn.gain, bn.bias, bn.running_mean.values(),
                           bn.running_var.values(), bn.eps);
  }
  std::vector<double> batch_mean(bn.channels), batch_var(bn.channels);
  Tensor y = batch_norm_train(x, bn.gain, bn.bias, bn.eps, batch_mean, batch_var);
  const double n = static_cast<double>(x.dim(0) * x.dim(2));
  auto rm = bn.running_mean.values();
  auto rv = bn.running_var.values();
  for (std::size_t c = 0; c < bn.channels; ++c) {
    const double unbiased = n > 1.0 ? batch_var[c] * n / (n - 1.0) : batch_var[c];
    rm[c] = bn.momentum * batch_mean[c] + (1.0 - bn.momentum) * rm[c];
    rv[c] = bn.momentum * unbiased + (1.0 - bn.momentum) * rv[c];
  }
  return y;
}

// ---- LSTM ----

LstmCell make_lstm(ParamStore& store, const std::string& name, std::size_t input,
                   std::size_t hidden, Rng& rng) {
  LstmCell cell;
  cell.input_size = input;
  cell.hidden_size = hidden;
  cell.w_input = store.add_param(name + ".w_input",
                                 uniform_tensor({input, 4 * hidden}, std::sqrt(1.0 / input), rng));
  cell.w_hidden = store.add_param(
      name + ".w_hidden", uniform_tensor({hidden, 4 * hidden}, std::sqrt(1.0 / hidden), rng));
  cell.ln_gain = store.add_param(name + ".ln_gain", Tensor(Shape{4 * hidden}, 1.0));
  Tensor bias(Shape{4 * hidden});
  std::fill_n(bias.values().begin() + hidden, hidden, 1.0);
  cell.ln_bias = store.add_param(name + ".ln_bias", bias);
  return cell;
}

LstmState lstm_zero_state(std::size_t batch, std::size_t hidden) {
  return {Tensor(Shape{batch, hidden}), Tensor(Shape{batch, hidden})};
}

LstmState lstm_step_projected(const Tensor& input_proj, const LstmState& state,
                              const LstmCell& cell) {
  const std::size_t hidden = cell.hidden_size;
  if (state.h.rank() != 2 || state.h.dim(1) != hidden || state.c.shape() != state.h.shape() ||
      input_proj.shape() != Shape{state.h.dim(0), 4 * hidden}) {
    throw DimensionError("lstm_step: state " + shape_str(state.h.shape()) + "/" +
                         shape_str(state.c.shape()) + " and projection " +
                         shape_str(input_proj.shape()) + " do not fit hidden size " +
                         std::to_string(hidden));
  }
  const std::size_t batch = state.h.dim(0);
  Tensor pre = add(input_proj, matmul(state.h, cell.w_hidden));
  Tensor normed = reshape(layer_norm(reshape(pre, {batch, 4, hidden}), cell.eps), {batch, 4 * hidden});
  Tensor gates = add(mul(normed, cell.ln_gain), cell.ln_bias);
  Tensor in_gate = sigmoid(slice(gates, 1, 0, hidden));
  Tensor forget_gate = sigmoid(slice(gates, 1, hidden, 2 * hidden));
  Tensor out_gate = sigmoid(slice(gates, 1, 2 * hidden, 3 * hidden));
  Tensor candidate = tanh(slice(gates, 1, 3 * hidden, 4 * hidden));
  Tensor c_next = add(mul(forget_gate, state.c), mul(in_gate, candidate));
  Tensor h_next = mul(out_gate, tanh(c_next));
  return {h_next, c_next};
}

LstmState lstm_step(const Tensor& x_t, const LstmState& state, const LstmCell& cell) {
  if (x_t.rank() != 2 || x_t.dim(1) != cell.input_size) {
    throw DimensionError("lstm_step: input " + shape_str(x_t.shape()) + " for input size " +
                         std::to_string(cell.input_size));
  }
  return lstm_step_projected(matmul(x_t, cell.w_input), state, cell);
}

// ---- masked convolutions ----

MaskedConvStack make_masked_stack(ParamStore& store, const std::string& name,
                                  std::size_t num_layers, std::size_t in_channels,
                                  std::size_t channels, Rng& rng) {
  if (num_layers == 0) throw ContractError("masked conv stack needs at least one layer");
  MaskedConvStack stack{num_layers, in_channels, channels, {}};
  for (std::size_t i = 0; i < num_layers; ++i) {
    stack.layers.push_back(make_conv1d(store, name + "." + std::to_string(i),
                                       i == 0 ? in_channels : channels, channels, kMaskedKernel,
                                       1, rng));
  }
  return stack;
}

Tensor masked_conv_forward(const Tensor& x, const MaskedConvStack& stack) {
  if (x.rank() != 3 || x.dim(1) != stack.in_channels) {
    throw DimensionError("masked conv: input " + shape_str(x.shape()) + " for stack with " +
                         std::to_string(stack.in_channels) + " input channels");
  }
  const std::size_t length = x.dim(2);
  Tensor h = x;
  for (const auto& layer : stack.layers) {
    // Left padding of K - 1 makes output t see inputs t - K + 1 .. t.
    h = relu(conv1d(h, layer.weight, layer.bias, 1, layer.kernel_size - 1, length));
  }
  return h;
}

}  // namespace tvae
