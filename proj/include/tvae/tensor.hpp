#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace tvae {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Vectorized reductions pick their summation order
// from the buffer's alignment, so a fixed alignment keeps results
// reproducible from one allocation to the next.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  // Empty until some gradient is written.
  Buffer grad;
  bool requires_grad = false;

  Buffer& ensure_grad() {
    if (grad.empty() && !value.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense float64 tensor in row-major order. Copies share storage; use clone()
// for an independent value copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  // Empty span when no gradient has been written.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool all_finite() const;

  // Independent copy of the values, outside any graph.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_tensor(std::shared_ptr<detail::Node>);

  std::shared_ptr<detail::Node> node_;
};

Tensor make_tensor(std::shared_ptr<detail::Node> node);

// Integer tensor used for token ids and targets.
struct IntTensor {
  Shape shape;
  std::vector<std::int32_t> data;

  IntTensor() = default;
  IntTensor(Shape s, std::int32_t fill = 0) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  std::int32_t& at(std::size_t row, std::size_t col) { return data[row * shape[1] + col]; }
  std::int32_t at(std::size_t row, std::size_t col) const { return data[row * shape[1] + col]; }
};

// Records operations in execution order. backward() replays the recorded
// rules in exact reverse order.
//
// Gradient semantics: each backward() first clears the gradients of every
// tensor produced on this tape, then seeds d(loss)/d(loss) = 1. Leaf tensors
// (parameters) are never cleared, so calling backward() twice without
// zero_grad() on the leaves accumulates exactly twice the gradient.
class Tape {
 public:
  using Rule = std::function<void()>;

  void record(std::shared_ptr<detail::Node> output, Rule rule);
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    Rule rule;
  };
  std::vector<Entry> entries_;
};

// Makes a tape the recording target of the current thread for its lifetime.
// Ops run without an active tape build no graph.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// ---- elementwise and structural ops ----
//
// Binary ops broadcast when one operand's shape equals the trailing dims of
// the other (a scalar broadcasts against anything).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

// a [M, K] x b [K, N] -> [M, N]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);
// General axis permutation; out.shape[i] = a.shape[perm[i]].
Tensor transpose(const Tensor& a, const std::vector<std::size_t>& perm);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
// Over the last axis.
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Fused log-softmax + negative log-likelihood over rows of logits [N, V].
// Returns the scalar sum_i weight_i * -log softmax(logits_i)[target_i]. An
// empty weight span means all weights are 1.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::span<const double> weights = {});

// Row lookup: ids [B, L], table [V, E] -> [B, L, E].
Tensor embedding(const IntTensor& ids, const Tensor& table);

// Normalizes over the last axis, no affine part. Zero-variance rows map to 0.
Tensor layer_norm(const Tensor& x, double eps);

// Raw 1-D convolution on x [B, C_in, L] with weight [C_out, C_in, K]:
//   out[b, o, t] = bias[o] + sum_{c,k} w[o, c, k] * x[b, c, t*stride + k - pad_left]
// with zeros outside [0, L). Bias may be undefined.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad_left, std::size_t out_len);

// Exact adjoint of conv1d with the same geometry. x [B, C_in, M], weight
// [C_in, C_out, K]; the result has length out_len, where conv1d over out_len
// with this stride/padding yields length M.
Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t pad_left, std::size_t out_len);

// Per-channel normalization of x [B, C, L] using batch statistics over B x L.
// Writes the batch mean and biased variance into the given spans.
Tensor batch_norm_train(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                        std::span<double> batch_mean, std::span<double> batch_var);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       std::span<const double> running_mean, std::span<const double> running_var,
                       double eps);

// Backward from a scalar loss on the active tape.
void backward(const Tensor& loss);

}  // namespace tvae
