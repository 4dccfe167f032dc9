#pragma once

// Reverse-mode automatic differentiation over a closed operator set.
//
// A Graph is a tape: nodes are appended in construction order, which is also a
// valid topological order. Shapes are inferred and checked when a node is
// created; values are computed by forward(), so leaf values may be replaced
// with set_value() and the same graph re-evaluated (the finite-difference
// oracle relies on this).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "padd/errors.hpp"
#include "padd/tensor.hpp"

namespace padd {

enum class Op {
  kLeaf,
  kMatmul,
  kAdd,
  kMulScalar,
  kLayerNorm,
  kSoftmax,
  kGelu,
  kRelu,
  kConv1d,
  kMeanPool,
  kSlice,
  kConcat,
  kEmbeddingAdd,
  kCrossEntropy,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMulScalar: return "mul-scalar";
    case Op::kLayerNorm: return "layernorm";
    case Op::kSoftmax: return "softmax";
    case Op::kGelu: return "gelu";
    case Op::kRelu: return "relu";
    case Op::kConv1d: return "conv1d";
    case Op::kMeanPool: return "mean-pool";
    case Op::kSlice: return "slice";
    case Op::kConcat: return "concat";
    case Op::kEmbeddingAdd: return "embedding-add";
    case Op::kCrossEntropy: return "cross-entropy";
  }
  return "?";
}

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

namespace detail {

// C (+)= op(A) * op(B), with op(A) of shape m x k and op(B) of shape k x n.
// A is stored m x k (or k x m when ta); B is stored k x n (or n x k when tb).
inline void gemm(const double* a, bool ta, const double* b, bool tb, double* c, std::size_t m, std::size_t n,
                 std::size_t k, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        c[i * n + j] += s;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* ap = a + p * m;
      const double* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = ap[i];
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
  }
}

inline std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
  if (s.size() == 1) return {s[0], 1};
  if (s.size() == 2) return {s[0], s[1]};
  return {0, 0};
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace detail

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  std::size_t size() const noexcept { return nodes_.size(); }

  Var leaf(Tensor value, bool requires_grad = false) {
    Node n;
    n.op = Op::kLeaf;
    n.shape = value.shape();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  /// op(a) * op(b) for matrices (rank-1 operands are columns).
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    auto [ar, ac] = matrix_dims(a, Op::kMatmul);
    auto [br, bc] = matrix_dims(b, Op::kMatmul);
    const std::size_t m = trans_a ? ac : ar, ka = trans_a ? ar : ac;
    const std::size_t kb = trans_b ? bc : br, n = trans_b ? br : bc;
    if (ka != kb) mismatch(Op::kMatmul, a, b);
    Node node = make(Op::kMatmul, {a, b}, {m, n});
    node.flag_a = trans_a;
    node.flag_b = trans_b;
    return push(std::move(node));
  }

  /// Elementwise a + b; b may also be a column (rows x 1) broadcast across a's columns.
  Var add(Var a, Var b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    bool ok = sa == sb;
    if (!ok) {
      auto [ar, ac] = detail::as_matrix(sa);
      auto [br, bc] = detail::as_matrix(sb);
      ok = ar != 0 && ac != 0 && br == ar && bc == 1;
    }
    if (!ok) mismatch(Op::kAdd, a, b);
    return push(make(Op::kAdd, {a, b}, sa));
  }

  Var mul_scalar(Var a, double s) {
    Node node = make(Op::kMulScalar, {a}, shape(a));
    node.scalar = s;
    return push(std::move(node));
  }

  /// Normalizes every column of x over its rows, then applies gamma * xhat + beta
  /// with gamma, beta of length rows.
  Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    auto [r, c] = matrix_dims(x, Op::kLayerNorm);
    (void)c;
    if (numel(shape(gamma)) != r || detail::as_matrix(shape(gamma)).second != 1) mismatch(Op::kLayerNorm, x, gamma);
    if (numel(shape(beta)) != r || detail::as_matrix(shape(beta)).second != 1) mismatch(Op::kLayerNorm, x, beta);
    if (eps < 0) throw ConfigError("layernorm: eps must be non-negative");
    Node node = make(Op::kLayerNorm, {x, gamma, beta}, shape(x));
    node.scalar = eps;
    return push(std::move(node));
  }

  /// Softmax along each row.
  Var softmax(Var x) {
    matrix_dims(x, Op::kSoftmax);
    return push(make(Op::kSoftmax, {x}, shape(x)));
  }

  Var gelu(Var x) { return push(make(Op::kGelu, {x}, shape(x))); }
  Var relu(Var x) { return push(make(Op::kRelu, {x}, shape(x))); }

  /// x: (in_channels, length); w: (out_channels, in_channels, kernel); b: out_channels.
  /// Valid (unpadded) strided convolution producing (out_channels, out_length).
  Var conv1d(Var x, Var w, Var b, std::size_t stride) {
    auto [cin, len] = matrix_dims(x, Op::kConv1d);
    const Shape& sw = shape(w);
    if (sw.size() != 3 || sw[1] != cin) mismatch(Op::kConv1d, x, w);
    const std::size_t cout = sw[0], kernel = sw[2];
    if (numel(shape(b)) != cout) mismatch(Op::kConv1d, w, b);
    if (stride == 0) throw ConfigError("conv1d: stride must be positive");
    if (len < kernel)
      throw ShapeError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                       std::to_string(kernel) + " (input " + shape_str(shape(x)) + ", weight " + shape_str(sw) + ")");
    const std::size_t lout = (len - kernel) / stride + 1;
    Node node = make(Op::kConv1d, {x, w, b}, {cout, lout});
    node.begin = stride;
    return push(std::move(node));
  }

  /// Mean over columns [begin, cols) of every row -> (rows, 1).
  Var mean_pool(Var x, std::size_t begin = 0) {
    auto [r, c] = matrix_dims(x, Op::kMeanPool);
    if (begin >= c)
      throw ShapeError("mean-pool: start column " + std::to_string(begin) + " out of range for " +
                       shape_str(shape(x)));
    Node node = make(Op::kMeanPool, {x}, {r, 1});
    node.begin = begin;
    return push(std::move(node));
  }

  /// Rows (axis 0) or columns (axis 1) in [begin, end).
  Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
    auto [r, c] = matrix_dims(x, Op::kSlice);
    const std::size_t extent = axis == 0 ? r : c;
    if (axis > 1 || begin >= end || end > extent)
      throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                       std::to_string(axis) + " invalid for " + shape_str(shape(x)));
    Shape out = axis == 0 ? Shape{end - begin, c} : Shape{r, end - begin};
    Node node = make(Op::kSlice, {x}, out);
    node.axis = axis;
    node.begin = begin;
    node.end = end;
    return push(std::move(node));
  }

  Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty() || axis > 1) throw ShapeError("concat: needs at least one input and axis 0 or 1");
    auto [r0, c0] = matrix_dims(parts[0], Op::kConcat);
    std::size_t total = 0;
    for (const Var& p : parts) {
      auto [r, c] = matrix_dims(p, Op::kConcat);
      if ((axis == 0 && c != c0) || (axis == 1 && r != r0)) mismatch(Op::kConcat, parts[0], p);
      total += axis == 0 ? r : c;
    }
    Shape out = axis == 0 ? Shape{total, c0} : Shape{r0, total};
    Node node = make(Op::kConcat, std::vector<Var>(parts.begin(), parts.end()), out);
    node.axis = axis;
    return push(std::move(node));
  }

  /// x + constant, where the constant (e.g. a positional table) carries no gradient.
  Var embedding_add(Var x, Tensor constant) {
    if (constant.size() != numel(shape(x)) || detail::as_matrix(constant.shape()) != detail::as_matrix(shape(x)))
      throw ShapeError(std::string("embedding-add: shape mismatch between ") + shape_str(shape(x)) + " and " +
                       shape_str(constant.shape()));
    Node node = make(Op::kEmbeddingAdd, {x}, shape(x));
    node.aux = std::move(constant);
    return push(std::move(node));
  }

  /// Weighted cross-entropy over logits of shape (classes, batch), one column per sample:
  /// mean_i weights[y_i] * (-log softmax(column_i)[y_i]). Returns a length-1 tensor.
  Var cross_entropy(Var logits, std::vector<int> labels, std::vector<double> class_weights) {
    auto [k, b] = matrix_dims(logits, Op::kCrossEntropy);
    if (labels.size() != b)
      throw ShapeError("cross-entropy: " + std::to_string(labels.size()) + " labels for logits " +
                       shape_str(shape(logits)));
    if (class_weights.size() != k)
      throw ShapeError("cross-entropy: " + std::to_string(class_weights.size()) + " class weights for " +
                       std::to_string(k) + " classes");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= k) throw InputError("cross-entropy: label out of range");
    Node node = make(Op::kCrossEntropy, {logits}, {1});
    node.labels = std::move(labels);
    node.weights = std::move(class_weights);
    return push(std::move(node));
  }

  const Shape& shape(Var v) const { return at(v).shape; }
  bool requires_grad(Var v) const { return at(v).requires_grad; }
  Op op(Var v) const { return at(v).op; }

  void set_value(Var v, Tensor value) {
    Node& n = at(v);
    if (n.op != Op::kLeaf) throw InputError("set_value: node is not a leaf");
    if (value.shape() != n.shape)
      throw ShapeError("set_value: shape " + shape_str(value.shape()) + " does not match leaf " + shape_str(n.shape));
    n.value = std::move(value);
    evaluated_ = 0;
  }

  /// Evaluates every node up to and including root; returns root's value.
  const Tensor& forward(Var root) {
    const std::size_t last = at(root).id + 1;
    for (std::size_t i = evaluated_; i < last; ++i) {
      Node& n = nodes_[i];
      if (n.op == Op::kLeaf) continue;
      eval(n);
      if (!n.value.all_finite())
        throw NumericError(std::string("non-finite value produced by ") + op_name(n.op) + " (node " +
                           std::to_string(i) + ", shape " + shape_str(n.shape) + ")");
    }
    evaluated_ = std::max(evaluated_, last);
    return nodes_[root.id].value;
  }

  const Tensor& value(Var v) const {
    if (v.id >= evaluated_ && at(v).op != Op::kLeaf) throw InputError("value: node has not been evaluated");
    return at(v).value;
  }

  /// Reverse sweep from a scalar loss. Leaves that require gradients but are not
  /// reachable from loss end up with zero gradient.
  void backward(Var loss) {
    const Node& ln = at(loss);
    if (numel(ln.shape) != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(ln.shape));
    if (loss.id >= evaluated_) throw InputError("backward: forward has not been run");
    for (Node& n : nodes_)
      if (n.requires_grad)
        n.grad = Tensor(n.shape);
      else
        n.grad = Tensor();
    if (!ln.requires_grad) return;
    nodes_[loss.id].grad[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.op == Op::kLeaf) continue;
      backprop(n);
    }
  }

  /// Gradient of the last backward() w.r.t. v (zeros if v does not require grad).
  Tensor grad(Var v) const {
    const Node& n = at(v);
    if (n.grad.empty()) return Tensor(n.shape);
    return n.grad;
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::size_t id = 0;
    std::vector<std::size_t> inputs;
    Shape shape;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool flag_a = false, flag_b = false;
    double scalar = 0.0;
    std::size_t axis = 0, begin = 0, end = 0;
    std::vector<int> labels;
    std::vector<double> weights;
    Tensor aux;                  // embedding constant, im2col buffer, normalized activations
    std::vector<double> cache;  // per-column inverse std, per-sample softmax
  };

  const Node& at(Var v) const {
    if (v.id >= nodes_.size()) throw InputError("unknown graph node " + std::to_string(v.id));
    return nodes_[v.id];
  }
  Node& at(Var v) {
    if (v.id >= nodes_.size()) throw InputError("unknown graph node " + std::to_string(v.id));
    return nodes_[v.id];
  }

  std::pair<std::size_t, std::size_t> matrix_dims(Var v, Op op) const {
    auto d = detail::as_matrix(shape(v));
    if (d.first == 0)
      throw ShapeError(std::string(op_name(op)) + ": expected a vector or matrix, got " + shape_str(shape(v)));
    return d;
  }

  [[noreturn]] void mismatch(Op op, Var a, Var b) const {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_str(shape(a)) + " and " +
                     shape_str(shape(b)));
  }

  Node make(Op op, std::vector<Var> in, Shape out) const {
    Node n;
    n.op = op;
    n.shape = std::move(out);
    for (const Var& v : in) {
      const Node& src = at(v);
      n.inputs.push_back(src.id);
      n.requires_grad = n.requires_grad || src.requires_grad;
    }
    return n;
  }

  Var push(Node n) {
    n.id = nodes_.size();
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor& in_value(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]].value; }
  Node& in_node(const Node& n, std::size_t k) { return nodes_[n.inputs[k]]; }

  void eval(Node& n) {
    if (n.value.shape() != n.shape) n.value = Tensor(n.shape);
    Tensor& out = n.value;
    switch (n.op) {
      case Op::kLeaf: break;
      case Op::kMatmul: {
        const Tensor& a = in_value(n, 0);
        const Tensor& b = in_value(n, 1);
        const std::size_t k = n.flag_a ? a.rows() : a.cols();
        detail::gemm(a.data(), n.flag_a, b.data(), n.flag_b, out.data(), out.rows(), out.cols(), k, false);
        break;
      }
      case Op::kAdd: {
        const Tensor& a = in_value(n, 0);
        const Tensor& b = in_value(n, 1);
        if (a.size() == b.size()) {
          for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
        } else {
          const std::size_t r = a.rows(), c = a.cols();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] + b[i];
        }
        break;
      }
      case Op::kMulScalar: {
        const Tensor& a = in_value(n, 0);
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * n.scalar;
        break;
      }
      case Op::kLayerNorm: eval_layernorm(n); break;
      case Op::kSoftmax: {
        const Tensor& x = in_value(n, 0);
        const std::size_t r = x.rows(), c = x.cols();
        for (std::size_t i = 0; i < r; ++i) {
          const double* xi = x.data() + i * c;
          double* yi = out.data() + i * c;
          const double mx = *std::max_element(xi, xi + c);
          double s = 0.0;
          for (std::size_t j = 0; j < c; ++j) s += (yi[j] = std::exp(xi[j] - mx));
          for (std::size_t j = 0; j < c; ++j) yi[j] /= s;
        }
        break;
      }
      case Op::kGelu: {
        const Tensor& x = in_value(n, 0);
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = detail::gelu(x[i]);
        break;
      }
      case Op::kRelu: {
        const Tensor& x = in_value(n, 0);
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      }
      case Op::kConv1d: eval_conv1d(n); break;
      case Op::kMeanPool: {
        const Tensor& x = in_value(n, 0);
        const std::size_t r = x.rows(), c = x.cols();
        const double inv = 1.0 / static_cast<double>(c - n.begin);
        for (std::size_t i = 0; i < r; ++i) {
          double s = 0.0;
          for (std::size_t j = n.begin; j < c; ++j) s += x[i * c + j];
          out[i] = s * inv;
        }
        break;
      }
      case Op::kSlice: {
        const Tensor& x = in_value(n, 0);
        const std::size_t c = x.cols(), oc = out.cols();
        if (n.axis == 0) {
          std::copy(x.data() + n.begin * c, x.data() + n.end * c, out.data());
        } else {
          for (std::size_t i = 0; i < out.rows(); ++i)
            std::copy(x.data() + i * c + n.begin, x.data() + i * c + n.end, out.data() + i * oc);
        }
        break;
      }
      case Op::kConcat: {
        std::size_t offset = 0;
        const std::size_t oc = out.cols();
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Tensor& x = in_value(n, k);
          if (n.axis == 0) {
            std::copy(x.data(), x.data() + x.size(), out.data() + offset * oc);
            offset += x.rows();
          } else {
            const std::size_t c = x.cols();
            for (std::size_t i = 0; i < x.rows(); ++i)
              std::copy(x.data() + i * c, x.data() + (i + 1) * c, out.data() + i * oc + offset);
            offset += c;
          }
        }
        break;
      }
      case Op::kEmbeddingAdd: {
        const Tensor& x = in_value(n, 0);
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + n.aux[i];
        break;
      }
      case Op::kCrossEntropy: {
        const Tensor& z = in_value(n, 0);
        const std::size_t k = z.rows(), b = z.cols();
        n.cache.assign(k * b, 0.0);
        double total = 0.0;
        for (std::size_t s = 0; s < b; ++s) {
          double mx = z[s];
          for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, z[c * b + s]);
          double sum = 0.0;
          for (std::size_t c = 0; c < k; ++c) sum += std::exp(z[c * b + s] - mx);
          const double lse = mx + std::log(sum);
          for (std::size_t c = 0; c < k; ++c) n.cache[c * b + s] = std::exp(z[c * b + s] - lse);
          const auto y = static_cast<std::size_t>(n.labels[s]);
          total += n.weights[y] * (lse - z[y * b + s]);
        }
        out[0] = total / static_cast<double>(b);
        break;
      }
    }
  }

  void eval_layernorm(Node& n) {
    const Tensor& x = in_value(n, 0);
    const Tensor& g = in_value(n, 1);
    const Tensor& be = in_value(n, 2);
    const std::size_t r = x.rows(), c = x.cols();
    if (n.aux.shape() != x.shape()) n.aux = Tensor(x.shape());
    n.cache.assign(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < r; ++i) mean += x[i * c + j];
      mean /= static_cast<double>(r);
      double var = 0.0;
      for (std::size_t i = 0; i < r; ++i) {
        const double d = x[i * c + j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(r);
      const double inv = 1.0 / std::sqrt(var + n.scalar);
      n.cache[j] = inv;
      for (std::size_t i = 0; i < r; ++i) {
        const double xh = (x[i * c + j] - mean) * inv;
        n.aux[i * c + j] = xh;
        n.value[i * c + j] = g[i] * xh + be[i];
      }
    }
  }

  void eval_conv1d(Node& n) {
    const Tensor& x = in_value(n, 0);
    const Tensor& w = in_value(n, 1);
    const Tensor& b = in_value(n, 2);
    const std::size_t cin = x.rows(), len = x.cols();
    const std::size_t cout = w.shape()[0], kernel = w.shape()[2], stride = n.begin;
    const std::size_t lout = n.shape[1];
    // im2col: row (c*kernel + k), column t holds x[c, t*stride + k].
    if (n.aux.shape() != Shape{cin * kernel, lout}) n.aux = Tensor({cin * kernel, lout});
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t k = 0; k < kernel; ++k) {
        double* row = n.aux.data() + (c * kernel + k) * lout;
        const double* xc = x.data() + c * len + k;
        for (std::size_t t = 0; t < lout; ++t) row[t] = xc[t * stride];
      }
    detail::gemm(w.data(), false, n.aux.data(), false, n.value.data(), cout, lout, cin * kernel, false);
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t t = 0; t < lout; ++t) n.value[o * lout + t] += b[o];
  }

  void backprop(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kLeaf: break;
      case Op::kMatmul: {
        Node& na = in_node(n, 0);
        Node& nb = in_node(n, 1);
        const Tensor& a = na.value;
        const Tensor& b = nb.value;
        const std::size_t m = n.shape[0], cols = n.shape[1];
        const std::size_t k = n.flag_a ? a.rows() : a.cols();
        if (na.requires_grad) {
          if (!n.flag_a)
            detail::gemm(g.data(), false, b.data(), !n.flag_b, na.grad.data(), m, k, cols, true);
          else
            detail::gemm(b.data(), n.flag_b, g.data(), true, na.grad.data(), k, m, cols, true);
        }
        if (nb.requires_grad) {
          if (!n.flag_b)
            detail::gemm(a.data(), !n.flag_a, g.data(), false, nb.grad.data(), k, cols, m, true);
          else
            detail::gemm(g.data(), true, a.data(), n.flag_a, nb.grad.data(), cols, k, m, true);
        }
        break;
      }
      case Op::kAdd: {
        Node& na = in_node(n, 0);
        Node& nb = in_node(n, 1);
        if (na.requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i];
        if (nb.requires_grad) {
          if (nb.grad.size() == g.size()) {
            for (std::size_t i = 0; i < g.size(); ++i) nb.grad[i] += g[i];
          } else {
            const std::size_t r = g.rows(), c = g.cols();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < c; ++j) nb.grad[i] += g[i * c + j];
          }
        }
        break;
      }
      case Op::kMulScalar: {
        Node& na = in_node(n, 0);
        if (na.requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * n.scalar;
        break;
      }
      case Op::kLayerNorm: {
        Node& nx = in_node(n, 0);
        Node& ng = in_node(n, 1);
        Node& nbeta = in_node(n, 2);
        const Tensor& gamma = ng.value;
        const std::size_t r = g.rows(), c = g.cols();
        const double rr = static_cast<double>(r);
        for (std::size_t j = 0; j < c; ++j) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t i = 0; i < r; ++i) {
            const double gy = g[i * c + j];
            const double xh = n.aux[i * c + j];
            if (ng.requires_grad) ng.grad[i] += gy * xh;
            if (nbeta.requires_grad) nbeta.grad[i] += gy;
            const double d = gy * gamma[i];
            sum_d += d;
            sum_dx += d * xh;
          }
          if (nx.requires_grad) {
            const double inv = n.cache[j];
            for (std::size_t i = 0; i < r; ++i) {
              const double d = g[i * c + j] * gamma[i];
              nx.grad[i * c + j] += inv / rr * (rr * d - sum_d - n.aux[i * c + j] * sum_dx);
            }
          }
        }
        break;
      }
      case Op::kSoftmax: {
        Node& nx = in_node(n, 0);
        if (!nx.requires_grad) break;
        const std::size_t r = g.rows(), c = g.cols();
        for (std::size_t i = 0; i < r; ++i) {
          const double* yi = n.value.data() + i * c;
          const double* gi = g.data() + i * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gi[j] * yi[j];
          for (std::size_t j = 0; j < c; ++j) nx.grad[i * c + j] += yi[j] * (gi[j] - dot);
        }
        break;
      }
      case Op::kGelu: {
        Node& nx = in_node(n, 0);
        if (!nx.requires_grad) break;
        for (std::size_t i = 0; i < g.size(); ++i) nx.grad[i] += g[i] * detail::gelu_grad(nx.value[i]);
        break;
      }
      case Op::kRelu: {
        Node& nx = in_node(n, 0);
        if (!nx.requires_grad) break;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (nx.value[i] > 0.0) nx.grad[i] += g[i];
        break;
      }
      case Op::kConv1d: backprop_conv1d(n); break;
      case Op::kMeanPool: {
        Node& nx = in_node(n, 0);
        if (!nx.requires_grad) break;
        const std::size_t r = nx.value.rows(), c = nx.value.cols();
        const double inv = 1.0 / static_cast<double>(c - n.begin);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = n.begin; j < c; ++j) nx.grad[i * c + j] += g[i] * inv;
        break;
      }
      case Op::kSlice: {
        Node& nx = in_node(n, 0);
        if (!nx.requires_grad) break;
        const std::size_t c = nx.value.cols(), oc = g.cols();
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < oc; ++j) {
            const std::size_t src = n.axis == 0 ? (i + n.begin) * c + j : i * c + j + n.begin;
            nx.grad[src] += g[i * oc + j];
          }
        break;
      }
      case Op::kConcat: {
        std::size_t offset = 0;
        const std::size_t oc = g.cols();
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          Node& nx = in_node(n, k);
          const std::size_t r = nx.value.rows(), c = nx.value.cols();
          if (nx.requires_grad) {
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < c; ++j) {
                const std::size_t dst = n.axis == 0 ? (i + offset) * oc + j : i * oc + j + offset;
                nx.grad[i * c + j] += g[dst];
              }
          }
          offset += n.axis == 0 ? r : c;
        }
        break;
      }
      case Op::kEmbeddingAdd: {
        Node& nx = in_node(n, 0);
        if (nx.requires_grad)
          for (std::size_t i = 0; i < g.size(); ++i) nx.grad[i] += g[i];
        break;
      }
      case Op::kCrossEntropy: {
        Node& nz = in_node(n, 0);
        if (!nz.requires_grad) break;
        const std::size_t k = nz.value.rows(), b = nz.value.cols();
        const double scale = g[0] / static_cast<double>(b);
        for (std::size_t s = 0; s < b; ++s) {
          const auto y = static_cast<std::size_t>(n.labels[s]);
          const double w = n.weights[y] * scale;
          for (std::size_t c = 0; c < k; ++c)
            nz.grad[c * b + s] += w * (n.cache[c * b + s] - (c == y ? 1.0 : 0.0));
        }
        break;
      }
    }
  }

  void backprop_conv1d(Node& n) {
    Node& nx = in_node(n, 0);
    Node& nw = in_node(n, 1);
    Node& nb = in_node(n, 2);
    const Tensor& g = n.grad;
    const Tensor& w = nw.value;
    const std::size_t cout = w.shape()[0], cin = w.shape()[1], kernel = w.shape()[2];
    const std::size_t lout = n.shape[1], len = nx.value.cols(), stride = n.begin;
    if (nb.requires_grad)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t t = 0; t < lout; ++t) nb.grad[o] += g[o * lout + t];
    if (nw.requires_grad)
      detail::gemm(g.data(), false, n.aux.data(), true, nw.grad.data(), cout, cin * kernel, lout, true);
    if (nx.requires_grad) {
      std::vector<double> dcol(cin * kernel * lout, 0.0);
      detail::gemm(w.data(), true, g.data(), false, dcol.data(), cin * kernel, lout, cout, false);
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t k = 0; k < kernel; ++k) {
          const double* row = dcol.data() + (c * kernel + k) * lout;
          double* xc = nx.grad.data() + c * len + k;
          for (std::size_t t = 0; t < lout; ++t) xc[t * stride] += row[t];
        }
    }
  }

  std::vector<Node> nodes_;
  std::size_t evaluated_ = 0;
};

/// Central differences: (f(p + eps e_i) - f(p - eps e_i)) / (2 eps) for every coordinate i.
template <typename F>
Tensor finite_difference_grad(F&& f, const Tensor& p, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_difference_grad: eps must be positive");
  Tensor out(p.shape());
  Tensor probe = p;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(static_cast<const Tensor&>(probe));
    probe[i] = orig - eps;
    const double down = f(static_cast<const Tensor&>(probe));
    probe[i] = orig;
    out[i] = (up - down) / (2.0 * eps);
    if (!std::isfinite(out[i]))
      throw NumericError("finite_difference_grad: non-finite difference at coordinate " + std::to_string(i));
  }
  return out;
}

/// Element-wise |a-b| / max(1, |a|, |b|), maximized over all entries.
inline double max_relative_error(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_relative_error: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace padd
