#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "tvae/errors.hpp"
#include "tvae/tensor.hpp"

namespace tvae {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void attach(const Tensor& out, Tape::Rule rule) {
  out.node()->requires_grad = true;
  active_tape()->record(out.node(), std::move(rule));
}

// Gradient buffer of an input, or nullptr when it does not take gradients.
Buffer* grad_of(const NodePtr& n) {
  return (n && n->requires_grad) ? &n->ensure_grad() : nullptr;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor argument");
}

// Trailing-dims broadcast between two shapes.
struct Broadcast {
  Shape out;
  std::size_t inner_a;  // period of a's index
  std::size_t inner_b;
};

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return {sa, a.numel(), b.numel()};
  auto is_suffix = [](const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
  };
  if (is_suffix(sb, sa)) return {sa, a.numel(), b.numel()};
  if (is_suffix(sa, sb)) return {sb, a.numel(), b.numel()};
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sa) + " with " +
                       shape_str(sb));
}

template <typename Fn, typename DFn>
Tensor unary(const Tensor& x, Fn fn, DFn dfn) {
  require_defined(x, "unary");
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = fn(xv[i]);
  if (tracking({&x})) {
    NodePtr xn = x.node(), on = out.node();
    attach(out, [xn, on, dfn] {
      auto& gx = xn->ensure_grad();
      const auto& go = on->grad;
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * dfn(xn->value[i], on->value[i]);
    });
  }
  return out;
}

void im2col(const double* src, std::size_t channels, std::size_t length, std::size_t kernel,
            std::size_t stride, std::size_t pad_left, std::size_t out_len, double* dst) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < kernel; ++k) {
      double* row = dst + (c * kernel + k) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) -
                                   static_cast<std::ptrdiff_t>(pad_left);
        row[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) ? src[c * length + pos]
                                                                          : 0.0;
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t channels, std::size_t length, std::size_t kernel,
                std::size_t stride, std::size_t pad_left, std::size_t out_len, double* dst) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < kernel; ++k) {
      const double* row = cols + (c * kernel + k) * out_len;
      for (std::size_t t = 0; t < out_len; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + k) -
                                   static_cast<std::ptrdiff_t>(pad_left);
        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) dst[c * length + pos] += row[t];
      }
    }
  }
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

// ---- binary ----

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  Broadcast bc = broadcast(a, b, "add");
  Tensor out(bc.out);
  auto ov = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i % bc.inner_a] + bv[i % bc.inner_b];
  if (tracking({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    attach(out, [an, bn, on, bc] {
      const auto& go = on->grad;
      if (auto* ga = grad_of(an)) {
        for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i % bc.inner_a] += go[i];
      }
      if (auto* gb = grad_of(bn)) {
        for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i % bc.inner_b] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  Broadcast bc = broadcast(a, b, "mul");
  Tensor out(bc.out);
  auto ov = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i % bc.inner_a] * bv[i % bc.inner_b];
  if (tracking({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    attach(out, [an, bn, on, bc] {
      const auto& go = on->grad;
      if (auto* ga = grad_of(an)) {
        for (std::size_t i = 0; i < go.size(); ++i)
          (*ga)[i % bc.inner_a] += go[i] * bn->value[i % bc.inner_b];
      }
      if (auto* gb = grad_of(bn)) {
        for (std::size_t i = 0; i < go.size(); ++i)
          (*gb)[i % bc.inner_b] += go[i] * an->value[i % bc.inner_a];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  MapMat(out.values().data(), m, n).noalias() =
      ConstMapMat(a.values().data(), m, k) * ConstMapMat(b.values().data(), k, n);
  if (tracking({&a, &b})) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    attach(out, [an, bn, on, m, k, n] {
      ConstMapMat go(on->grad.data(), m, n);
      if (auto* ga = grad_of(an)) {
        MapMat(ga->data(), m, k).noalias() += go * ConstMapMat(bn->value.data(), k, n).transpose();
      }
      if (auto* gb = grad_of(bn)) {
        MapMat(gb->data(), k, n).noalias() += ConstMapMat(an->value.data(), m, k).transpose() * go;
      }
    });
  }
  return out;
}

// ---- structural ----

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " does not match " + shape_str(first) +
                           " off axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  Tensor out(out_shape);
  auto ov = out.values();
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.shape()[axis] * inner;
    auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.begin() + o * chunk, chunk, ov.begin() + o * out_row + offset);
    }
    offset += chunk;
  }
  std::vector<const Tensor*> ptrs;
  bool any = false;
  if (active_tape()) {
    for (const auto& p : parts) any = any || p.requires_grad();
  }
  if (any) {
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    NodePtr on = out.node();
    attach(out, [nodes, offsets, on, outer, inner, out_row, axis] {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto* g = grad_of(nodes[i]);
        if (!g) continue;
        const std::size_t chunk = nodes[i]->shape[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = on->grad.data() + o * out_row + offsets[i];
          double* dst = g->data() + o * chunk;
          for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_defined(a, "slice");
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") on axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t in_row = s[axis] * inner, chunk = (end - begin) * inner, skip = begin * inner;
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(av.begin() + o * in_row + skip, chunk, ov.begin() + o * chunk);
  }
  if (tracking({&a})) {
    NodePtr an = a.node(), on = out.node();
    attach(out, [an, on, outer, in_row, chunk, skip] {
      auto& ga = an->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = on->grad.data() + o * chunk;
        double* dst = ga.data() + o * in_row + skip;
        for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
  if (tracking({&a})) {
    NodePtr an = a.node(), on = out.node();
    attach(out, [an, on] {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
    });
  }
  return out;
}

Tensor transpose(const Tensor& a, const std::vector<std::size_t>& perm) {
  require_defined(a, "transpose");
  const Shape& s = a.shape();
  if (perm.size() != s.size()) {
    throw DimensionError("transpose: permutation rank " + std::to_string(perm.size()) +
                         " does not match shape " + shape_str(s));
  }
  std::vector<bool> seen(s.size(), false);
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= s.size() || seen[perm[i]]) throw DimensionError("transpose: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = s[perm[i]];
  }
  const auto in_strides = strides_of(s);
  std::vector<std::size_t> src_stride(s.size());
  for (std::size_t i = 0; i < perm.size(); ++i) src_stride[i] = in_strides[perm[i]];

  // Gather index for each output position, reused by the backward rule.
  const std::size_t n = a.numel();
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(s.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*index)[i] = src;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      ++counter[d];
      src += src_stride[d];
      if (counter[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      counter[d] = 0;
    }
  }
  Tensor out(out_shape);
  auto av = a.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[(*index)[i]];
  if (tracking({&a})) {
    NodePtr an = a.node(), on = out.node();
    attach(out, [an, on, index] {
      auto& ga = an->ensure_grad();
      for (std::size_t i = 0; i < index->size(); ++i) ga[(*index)[i]] += on->grad[i];
    });
  }
  return out;
}

// ---- nonlinearities ----

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  require_defined(x, "log");
  for (double v : x.values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  if (x.rank() == 0) throw DimensionError("softmax: needs at least one axis");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = ov.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) o[j] /= total;
  }
  if (tracking({&x})) {
    NodePtr xn = x.node(), on = out.node();
    attach(out, [xn, on, rows, cols] {
      auto& gx = xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = on->value.data() + r * cols;
        const double* g = on->grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  if (tracking({&x})) {
    NodePtr xn = x.node(), on = out.node();
    attach(out, [xn, on] {
      auto& gx = xn->ensure_grad();
      const double g = on->grad[0];
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets,
                     std::span<const double> weights) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be [N, V], got " + shape_str(logits.shape()));
  }
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (targets.size() != rows || (!weights.empty() && weights.size() != rows)) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " rows but " +
                         std::to_string(targets.size()) + " targets / " +
                         std::to_string(weights.size()) + " weights");
  }
  auto probs = std::make_shared<std::vector<double>>(rows * cols);
  auto lv = logits.values();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= cols) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(cols) + ")");
    }
    const double* in = lv.data() + r * cols;
    double* p = probs->data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += (p[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) p[j] /= z;
    const double w = weights.empty() ? 1.0 : weights[r];
    if (w != 0.0) total += w * (mx + std::log(z) - in[t]);
  }
  Tensor out = Tensor::scalar(total);
  if (tracking({&logits})) {
    NodePtr ln = logits.node(), on = out.node();
    std::vector<std::int32_t> tgt(targets.begin(), targets.end());
    std::vector<double> wts(weights.begin(), weights.end());
    attach(out, [ln, on, probs, tgt = std::move(tgt), wts = std::move(wts), rows, cols] {
      auto& g = ln->ensure_grad();
      const double go = on->grad[0];
      for (std::size_t r = 0; r < rows; ++r) {
        const double w = (wts.empty() ? 1.0 : wts[r]) * go;
        if (w == 0.0) continue;
        const double* p = probs->data() + r * cols;
        double* gr = g.data() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) gr[j] += w * p[j];
        gr[tgt[r]] -= w;
      }
    });
  }
  return out;
}

Tensor embedding(const IntTensor& ids, const Tensor& table) {
  require_defined(table, "embedding");
  if (table.rank() != 2) {
    throw DimensionError("embedding: table must be [V, E], got " + shape_str(table.shape()));
  }
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  for (std::int32_t id : ids.data) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  Shape out_shape = ids.shape;
  out_shape.push_back(width);
  Tensor out(out_shape);
  auto tv = table.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ids.data.size(); ++i) {
    std::copy_n(tv.begin() + ids.data[i] * width, width, ov.begin() + i * width);
  }
  if (tracking({&table})) {
    NodePtr tn = table.node(), on = out.node();
    attach(out, [tn, on, rows = ids.data, width] {
      auto& g = tn->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = on->grad.data() + i * width;
        double* dst = g.data() + rows[i] * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, double eps) {
  require_defined(x, "layer_norm");
  if (x.rank() == 0) throw DimensionError("layer_norm: needs at least one axis");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  Tensor out(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = ov.data() + r * cols;
    double mu = 0.0;
    bool constant = true;
    for (std::size_t j = 0; j < cols; ++j) {
      mu += in[j];
      constant = constant && in[j] == in[0];
    }
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < cols; ++j) o[j] = constant ? 0.0 : (in[j] - mu) * inv;
  }
  if (tracking({&x})) {
    NodePtr xn = x.node(), on = out.node();
    attach(out, [xn, on, inv_std, rows, cols] {
      auto& gx = xn->ensure_grad();
      const double n = static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = on->value.data() + r * cols;
        const double* g = on->grad.data() + r * cols;
        double g_mean = 0.0, gy_mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          g_mean += g[j];
          gy_mean += g[j] * y[j];
        }
        g_mean /= n;
        gy_mean /= n;
        const double inv = (*inv_std)[r];
        for (std::size_t j = 0; j < cols; ++j) {
          gx[r * cols + j] += inv * (g[j] - g_mean - y[j] * gy_mean);
        }
      }
    });
  }
  return out;
}

// ---- convolution ----

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad_left, std::size_t out_len) {
  require_defined(x, "conv1d");
  require_defined(weight, "conv1d");
  if (x.rank() != 3 || weight.rank() != 3 || weight.dim(1) != x.dim(1)) {
    throw DimensionError("conv1d: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  if (stride == 0 || out_len == 0) throw ContractError("conv1d: stride and output length must be positive");
  const std::size_t batch = x.dim(0), c_in = x.dim(1), length = x.dim(2);
  const std::size_t c_out = weight.dim(0), kernel = weight.dim(2);
  if (bias.defined() && bias.shape() != Shape{c_out}) {
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(c_out) + " output channels");
  }
  const std::size_t rows = c_in * kernel;
  auto cols = std::make_shared<Buffer>(batch * rows * out_len);
  Tensor out(Shape{batch, c_out, out_len});
  ConstMapMat w(weight.values().data(), c_out, rows);
  for (std::size_t b = 0; b < batch; ++b) {
    double* col = cols->data() + b * rows * out_len;
    im2col(x.values().data() + b * c_in * length, c_in, length, kernel, stride, pad_left, out_len,
           col);
    MapMat o(out.values().data() + b * c_out * out_len, c_out, out_len);
    o.noalias() = w * ConstMapMat(col, rows, out_len);
    if (bias.defined()) {
      for (std::size_t c = 0; c < c_out; ++c) o.row(c).array() += bias.values()[c];
    }
  }
  if (tracking({&x, &weight, &bias})) {
    NodePtr xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
    NodePtr on = out.node();
    attach(out, [=] {
      Buffer gcol(rows * out_len);
      auto* gx = grad_of(xn);
      auto* gw = grad_of(wn);
      auto* gb = grad_of(bn);
      for (std::size_t b = 0; b < batch; ++b) {
        ConstMapMat go(on->grad.data() + b * c_out * out_len, c_out, out_len);
        const double* col = cols->data() + b * rows * out_len;
        if (gw) MapMat(gw->data(), c_out, rows).noalias() += go * ConstMapMat(col, rows, out_len).transpose();
        if (gb) {
          for (std::size_t c = 0; c < c_out; ++c) (*gb)[c] += go.row(c).sum();
        }
        if (gx) {
          MapMat(gcol.data(), rows, out_len).noalias() =
              ConstMapMat(wn->value.data(), c_out, rows).transpose() * go;
          col2im_add(gcol.data(), c_in, length, kernel, stride, pad_left, out_len,
                     gx->data() + b * c_in * length);
        }
      }
    });
  }
  return out;
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t pad_left, std::size_t out_len) {
  require_defined(x, "conv_transpose1d");
  require_defined(weight, "conv_transpose1d");
  if (x.rank() != 3 || weight.rank() != 3 || weight.dim(0) != x.dim(1)) {
    throw DimensionError("conv_transpose1d: input " + shape_str(x.shape()) +
                         " incompatible with weight " + shape_str(weight.shape()));
  }
  if (stride == 0 || out_len == 0) {
    throw ContractError("conv_transpose1d: stride and output length must be positive");
  }
  const std::size_t batch = x.dim(0), c_in = x.dim(1), in_len = x.dim(2);
  const std::size_t c_out = weight.dim(1), kernel = weight.dim(2);
  if (bias.defined() && bias.shape() != Shape{c_out}) {
    throw DimensionError("conv_transpose1d: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(c_out) + " output channels");
  }
  const std::size_t rows = c_out * kernel;
  Tensor out(Shape{batch, c_out, out_len});
  Buffer col(rows * in_len);
  ConstMapMat w(weight.values().data(), c_in, rows);
  for (std::size_t b = 0; b < batch; ++b) {
    MapMat(col.data(), rows, in_len).noalias() =
        w.transpose() * ConstMapMat(x.values().data() + b * c_in * in_len, c_in, in_len);
    double* o = out.values().data() + b * c_out * out_len;
    col2im_add(col.data(), c_out, out_len, kernel, stride, pad_left, in_len, o);
    if (bias.defined()) {
      for (std::size_t c = 0; c < c_out; ++c) {
        for (std::size_t t = 0; t < out_len; ++t) o[c * out_len + t] += bias.values()[c];
      }
    }
  }
  if (tracking({&x, &weight, &bias})) {
    NodePtr xn = x.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr;
    NodePtr on = out.node();
    attach(out, [=] {
      Buffer gcol(rows * in_len);
      auto* gx = grad_of(xn);
      auto* gw = grad_of(wn);
      auto* gb = grad_of(bn);
      for (std::size_t b = 0; b < batch; ++b) {
        const double* go = on->grad.data() + b * c_out * out_len;
        im2col(go, c_out, out_len, kernel, stride, pad_left, in_len, gcol.data());
        ConstMapMat gc(gcol.data(), rows, in_len);
        if (gx) {
          MapMat(gx->data() + b * c_in * in_len, c_in, in_len).noalias() +=
              ConstMapMat(wn->value.data(), c_in, rows) * gc;
        }
        if (gw) {
          MapMat(gw->data(), c_in, rows).noalias() +=
              ConstMapMat(xn->value.data() + b * c_in * in_len, c_in, in_len) * gc.transpose();
        }
        if (gb) {
          for (std::size_t c = 0; c < c_out; ++c) {
            for (std::size_t t = 0; t < out_len; ++t) (*gb)[c] += go[c * out_len + t];
          }
        }
      }
    });
  }
  return out;
}

// ---- batch normalization ----

Tensor batch_norm_train(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps,
                        std::span<double> batch_mean, std::span<double> batch_var) {
  require_defined(x, "batch_norm_train");
  if (x.rank() != 3) throw DimensionError("batch_norm: input must be [B, C, L], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1), length = x.dim(2);
  if (gain.shape() != Shape{channels} || bias.shape() != Shape{channels} ||
      batch_mean.size() != channels || batch_var.size() != channels) {
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(channels) +
                         " channels");
  }
  if (batch < 2) throw ContractError("batch_norm: train mode needs batch size >= 2");
  const double n = static_cast<double>(batch * length);
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0;
    const double first = xv[c * length];
    bool constant = true;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* row = xv.data() + (b * channels + c) * length;
      for (std::size_t t = 0; t < length; ++t) {
        mu += row[t];
        constant = constant && row[t] == first;
      }
    }
    mu /= n;
    double var = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* row = xv.data() + (b * channels + c) * length;
      for (std::size_t t = 0; t < length; ++t) var += (row[t] - mu) * (row[t] - mu);
    }
    var /= n;
    if (constant) {
      mu = first;
      var = 0.0;
    }
    batch_mean[c] = mu;
    batch_var[c] = var;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = inv;
    const double g = gain.values()[c], beta = bias.values()[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels + c) * length;
      for (std::size_t t = 0; t < length; ++t) {
        const double xh = constant ? 0.0 : (xv[base + t] - mu) * inv;
        (*xhat)[base + t] = xh;
        ov[base + t] = g * xh + beta;
      }
    }
  }
  if (tracking({&x, &gain, &bias})) {
    NodePtr xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    attach(out, [=] {
      auto* gx = grad_of(xn);
      auto* gg = grad_of(gn);
      auto* gbias = grad_of(bn);
      const auto& go = on->grad;
      for (std::size_t c = 0; c < channels; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * channels + c) * length;
          for (std::size_t t = 0; t < length; ++t) {
            sum_g += go[base + t];
            sum_gx += go[base + t] * (*xhat)[base + t];
          }
        }
        if (gg) (*gg)[c] += sum_gx;
        if (gbias) (*gbias)[c] += sum_g;
        if (gx) {
          const double g = gn->value[c], inv = (*inv_std)[c];
          const double mean_g = sum_g / n, mean_gx = sum_gx / n;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * length;
            for (std::size_t t = 0; t < length; ++t) {
              (*gx)[base + t] += g * inv * (go[base + t] - mean_g - (*xhat)[base + t] * mean_gx);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       std::span<const double> running_mean, std::span<const double> running_var,
                       double eps) {
  require_defined(x, "batch_norm_eval");
  if (x.rank() != 3) throw DimensionError("batch_norm: input must be [B, C, L], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), channels = x.dim(1), length = x.dim(2);
  if (gain.shape() != Shape{channels} || bias.shape() != Shape{channels} ||
      running_mean.size() != channels || running_var.size() != channels) {
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(channels) +
                         " channels");
  }
  std::vector<double> inv(channels);
  for (std::size_t c = 0; c < channels; ++c) inv[c] = 1.0 / std::sqrt(running_var[c] + eps);
  std::vector<double> mu(running_mean.begin(), running_mean.end());
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * length;
      for (std::size_t t = 0; t < length; ++t) {
        ov[base + t] = gain.values()[c] * (xv[base + t] - mu[c]) * inv[c] + bias.values()[c];
      }
    }
  }
  if (tracking({&x, &gain, &bias})) {
    NodePtr xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
    attach(out, [=] {
      auto* gx = grad_of(xn);
      auto* gg = grad_of(gn);
      auto* gbias = grad_of(bn);
      const auto& go = on->grad;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (b * channels + c) * length;
          for (std::size_t t = 0; t < length; ++t) {
            const double g = go[base + t];
            if (gx) (*gx)[base + t] += g * gn->value[c] * inv[c];
            if (gg) (*gg)[c] += g * (xn->value[base + t] - mu[c]) * inv[c];
            if (gbias) (*gbias)[c] += g;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace tvae
