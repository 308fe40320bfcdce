#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "advart/error.hpp"

namespace advart {

using Shape = std::vector<int>;

inline std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << "]";
  return os.str();
}

class Graph;

// Immutable dense row-major array of doubles. Copies are cheap handles that
// share the underlying buffer. A tensor either floats free as a constant
// (graph() == nullptr) or is recorded on a Graph tape, in which case
// gradients can reach it through backward().
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values) {
    require(shape_size(shape) == static_cast<std::int64_t>(values.size()),
            "tensor: shape " + shape_str(shape) + " does not match value count " +
                std::to_string(values.size()));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<const std::vector<double>>(std::move(values));
    return t;
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor full(Shape shape, double v) {
    auto n = shape_size(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
  }

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
  const std::vector<double>& values() const { return *data_; }
  const double* data() const { return data_->data(); }
  double operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  double item() const {
    require(size() == 1, "item: tensor is not a scalar, shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return node_ >= 0; }
  Graph* graph() const { return graph_; }
  int node() const { return node_; }

  // shared handle for backward closures that must outlive this Tensor
  std::shared_ptr<const std::vector<double>> shared_values() const { return data_; }

 private:
  friend class Graph;
  std::shared_ptr<const std::vector<double>> data_;
  Shape shape_;
  Graph* graph_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Nodes are appended in execution order, so insertion
// order is a topological order; backward() walks the tape once in reverse.
// Single-threaded per graph; distinct graphs are independent.
class Graph {
 public:
  using BackpropFn = std::function<void(Graph&, int self, const std::vector<int>& parents)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Differentiable input. Gradients accumulate here during backward().
  Tensor leaf(Shape shape, std::vector<double> values) {
    Tensor t = Tensor::from(std::move(shape), std::move(values));
    t.graph_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{t.shape_, {}, nullptr, t.data_});
    return t;
  }

  // Record an op result. `parents` lists recorded input nodes (constants are
  // not parents); `fn` routes the node's gradient to them.
  Tensor record(Shape shape, std::vector<double> values, std::vector<int> parents,
                BackpropFn fn) {
    Tensor t = Tensor::from(std::move(shape), std::move(values));
    t.graph_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{t.shape_, std::move(parents), std::move(fn), t.data_});
    return t;
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Backpropagate from a scalar root. Each recorded node is visited at most
  // once, in reverse insertion order. Grads from any prior call are cleared.
  void backward(const Tensor& root) {
    require(root.size() == 1,
            "backward: root must be a scalar, got shape " + shape_str(root.shape()));
    grads_.assign(nodes_.size(), {});
    reached_.assign(nodes_.size(), 0);
    computed_ = true;
    if (root.node_ < 0) return;  // constant root: all gradients are zero
    require(root.graph_ == this, "backward: root belongs to a different graph");
    accum(root.node_, 1) = {1.0};
    for (int id = root.node_; id >= 0; --id) {
      if (!reached_[static_cast<std::size_t>(id)]) continue;
      const Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backprop) n.backprop(*this, id, n.parents);
    }
  }

  // Gradient of the last backward() root w.r.t. `t` (zeros if unreached).
  std::vector<double> grad(const Tensor& t) const {
    require(computed_, "grad: backward() has not been run on this graph");
    require(t.graph_ == this && t.node_ >= 0,
            "grad: tensor is not recorded on this graph");
    const auto& g = grads_[static_cast<std::size_t>(t.node_)];
    if (g.empty()) return std::vector<double>(static_cast<std::size_t>(t.size()), 0.0);
    return g;
  }

  // --- op-author interface ---

  const std::vector<double>& grad_of(int node) const {
    return grads_[static_cast<std::size_t>(node)];
  }

  // forward values saved on the tape (usable for self or tracked parents)
  const std::vector<double>& values_of(int node) const {
    return *nodes_[static_cast<std::size_t>(node)].values;
  }

  std::vector<double>& accum(int node, std::int64_t size) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(size), 0.0);
    reached_[static_cast<std::size_t>(node)] = 1;
    return g;
  }

  std::int64_t node_size(int node) const {
    return shape_size(nodes_[static_cast<std::size_t>(node)].shape);
  }

 private:
  struct Node {
    Shape shape;
    std::vector<int> parents;
    BackpropFn backprop;  // null for leaves
    std::shared_ptr<const std::vector<double>> values;  // keeps activations alive
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<char> reached_;
  bool computed_ = false;
};

namespace detail {

inline Graph* common_graph(const Tensor& a, const Tensor& b) {
  Graph* ga = a.graph();
  Graph* gb = b.graph();
  if (ga && gb) require(ga == gb, "op: tensors belong to different graphs");
  return ga ? ga : gb;
}

inline bool tracked(const Tensor& t) { return t.graph() != nullptr && t.node() >= 0; }

struct BinPlan {
  std::int64_t n;        // output element count
  bool a_scalar, b_scalar;
  Shape out_shape;
};

inline BinPlan bin_plan(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return {a.size(), false, false, a.shape()};
  if (a.size() == 1) return {b.size(), true, false, b.shape()};
  if (b.size() == 1) return {a.size(), false, true, a.shape()};
  fail(std::string(op) + ": shape mismatch (" + shape_str(a.shape()) + " vs " +
       shape_str(b.shape()) + ")");
}

// Accumulate `contrib(i)` for i in [0,n) into a parent that may be a
// broadcast scalar.
template <typename Fn>
inline void accum_maybe_scalar(std::vector<double>& g, bool is_scalar, std::int64_t n,
                               Fn contrib) {
  if (is_scalar) {
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += contrib(i);
    g[0] += s;
  } else {
    for (std::int64_t i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] += contrib(i);
  }
}

inline std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

// Visit a block of `sizes` at `starts` inside a tensor of shape `shape`, one
// contiguous innermost run at a time: fn(src_offset, block_offset, run_len).
template <typename Fn>
inline void for_block_runs(const Shape& shape, const std::vector<int>& starts,
                           const std::vector<int>& sizes, Fn fn) {
  const int rank = static_cast<int>(shape.size());
  const auto st = strides_of(shape);
  const std::int64_t run = sizes[static_cast<std::size_t>(rank - 1)];
  std::vector<int> idx(static_cast<std::size_t>(rank), 0);
  std::int64_t blk_off = 0;
  for (;;) {
    std::int64_t src_off = 0;
    for (int d = 0; d < rank; ++d)
      src_off += (starts[static_cast<std::size_t>(d)] + idx[static_cast<std::size_t>(d)]) *
                 st[static_cast<std::size_t>(d)];
    fn(src_off, blk_off, run);
    blk_off += run;
    int d = rank - 2;
    for (; d >= 0; --d) {
      if (++idx[static_cast<std::size_t>(d)] < sizes[static_cast<std::size_t>(d)]) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
    if (d < 0) break;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops. Operands must have identical shapes, or one side
// may be a scalar (size-1 tensor or plain double).

enum class BinKind { Add, Sub, Mul, Div };

inline Tensor binary_op(BinKind kind, const Tensor& a, const Tensor& b) {
  static const char* names[] = {"add", "sub", "mul", "div"};
  const char* name = names[static_cast<int>(kind)];
  auto plan = detail::bin_plan(name, a, b);
  const std::int64_t n = plan.n;
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::int64_t i = 0; i < n; ++i) {
    double av = plan.a_scalar ? pa[0] : pa[i];
    double bv = plan.b_scalar ? pb[0] : pb[i];
    switch (kind) {
      case BinKind::Add: out[static_cast<std::size_t>(i)] = av + bv; break;
      case BinKind::Sub: out[static_cast<std::size_t>(i)] = av - bv; break;
      case BinKind::Mul: out[static_cast<std::size_t>(i)] = av * bv; break;
      case BinKind::Div:
        require(bv != 0.0, "div: division by zero");
        out[static_cast<std::size_t>(i)] = av / bv;
        break;
    }
  }
  Graph* g = detail::common_graph(a, b);
  bool ta = detail::tracked(a), tb = detail::tracked(b);
  if (!g || (!ta && !tb)) return Tensor::from(plan.out_shape, std::move(out));

  std::vector<int> parents;
  int pa_idx = -1, pb_idx = -1;
  if (ta) { pa_idx = static_cast<int>(parents.size()); parents.push_back(a.node()); }
  if (tb) { pb_idx = static_cast<int>(parents.size()); parents.push_back(b.node()); }
  auto da = a.shared_values();
  auto db = b.shared_values();
  return g->record(
      plan.out_shape, std::move(out), std::move(parents),
      [kind, plan, pa_idx, pb_idx, da, db](Graph& gr, int self,
                                           const std::vector<int>& par) {
        const auto& go = gr.grad_of(self);
        const std::int64_t n = plan.n;
        const double* av = da->data();
        const double* bv = db->data();
        if (pa_idx >= 0) {
          auto& ga = gr.accum(par[static_cast<std::size_t>(pa_idx)],
                              plan.a_scalar ? 1 : n);
          detail::accum_maybe_scalar(ga, plan.a_scalar, n, [&](std::int64_t i) {
            double gi = go[static_cast<std::size_t>(i)];
            switch (kind) {
              case BinKind::Add: return gi;
              case BinKind::Sub: return gi;
              case BinKind::Mul: return gi * (plan.b_scalar ? bv[0] : bv[i]);
              case BinKind::Div: return gi / (plan.b_scalar ? bv[0] : bv[i]);
            }
            return 0.0;
          });
        }
        if (pb_idx >= 0) {
          auto& gb = gr.accum(par[static_cast<std::size_t>(pb_idx)],
                              plan.b_scalar ? 1 : n);
          detail::accum_maybe_scalar(gb, plan.b_scalar, n, [&](std::int64_t i) {
            double gi = go[static_cast<std::size_t>(i)];
            double ai = plan.a_scalar ? av[0] : av[i];
            double bi = plan.b_scalar ? bv[0] : bv[i];
            switch (kind) {
              case BinKind::Add: return gi;
              case BinKind::Sub: return -gi;
              case BinKind::Mul: return gi * ai;
              case BinKind::Div: return -gi * ai / (bi * bi);
            }
            return 0.0;
          });
        }
      });
}

inline Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinKind::Div, a, b); }

inline Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor sub(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor sub(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor scalar_scale(const Tensor& a, double c) { return mul(a, c); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }

// ---------------------------------------------------------------------------
// Elementwise unary ops.

enum class UnaryKind { Sqrt, Square, Exp, Log, Sigmoid, LeakyRelu, Clamp };

inline Tensor unary_op(UnaryKind kind, const Tensor& x, double p0 = 0.0, double p1 = 0.0) {
  const std::int64_t n = x.size();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data();
  for (std::int64_t i = 0; i < n; ++i) {
    double v = px[i];
    double& o = out[static_cast<std::size_t>(i)];
    switch (kind) {
      case UnaryKind::Sqrt:
        require(v >= 0.0, "sqrt: negative input " + std::to_string(v));
        o = std::sqrt(v);
        break;
      case UnaryKind::Square: o = v * v; break;
      case UnaryKind::Exp: o = std::exp(v); break;
      case UnaryKind::Log:
        require(v > 0.0, "log: non-positive input " + std::to_string(v));
        o = std::log(v);
        break;
      case UnaryKind::Sigmoid:
        o = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        break;
      case UnaryKind::LeakyRelu: o = v > 0.0 ? v : p0 * v; break;
      case UnaryKind::Clamp: o = std::min(p1, std::max(p0, v)); break;
    }
  }
  if (!detail::tracked(x)) return Tensor::from(x.shape(), std::move(out));

  return x.graph()->record(
      x.shape(), std::move(out), {x.node()},
      [kind, p0, p1, n](Graph& gr, int self, const std::vector<int>& par) {
        const auto& go = gr.grad_of(self);
        const double* xv = gr.values_of(par[0]).data();
        const double* ov = gr.values_of(self).data();
        auto& gx = gr.accum(par[0], n);
        for (std::int64_t i = 0; i < n; ++i) {
          double gi = go[static_cast<std::size_t>(i)];
          double d = 0.0;
          switch (kind) {
            case UnaryKind::Sqrt:
              // guarded: keeps TV-style losses differentiable at flat spots
              // without biasing the gradient away from them
              d = 0.5 / std::sqrt(std::max(xv[i], 1e-8));
              break;
            case UnaryKind::Square: d = 2.0 * xv[i]; break;
            case UnaryKind::Exp: d = ov[i]; break;
            case UnaryKind::Log: d = 1.0 / xv[i]; break;
            case UnaryKind::Sigmoid: d = ov[i] * (1.0 - ov[i]); break;
            case UnaryKind::LeakyRelu: d = xv[i] > 0.0 ? 1.0 : p0; break;
            case UnaryKind::Clamp:
              // subgradient 1 inside [lo,hi] (inclusive), 0 outside
              d = (xv[i] >= p0 && xv[i] <= p1) ? 1.0 : 0.0;
              break;
          }
          gx[static_cast<std::size_t>(i)] += gi * d;
        }
      });
}

inline Tensor sqrt(const Tensor& x) { return unary_op(UnaryKind::Sqrt, x); }
inline Tensor square(const Tensor& x) { return unary_op(UnaryKind::Square, x); }
inline Tensor exp(const Tensor& x) { return unary_op(UnaryKind::Exp, x); }
inline Tensor log(const Tensor& x) { return unary_op(UnaryKind::Log, x); }
inline Tensor sigmoid(const Tensor& x) { return unary_op(UnaryKind::Sigmoid, x); }
inline Tensor leaky_relu(const Tensor& x, double slope = 0.1) {
  return unary_op(UnaryKind::LeakyRelu, x, slope);
}
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary_op(UnaryKind::Clamp, x, lo, hi);
}

// ---------------------------------------------------------------------------
// Reductions over all axes.

inline Tensor sum(const Tensor& x) {
  require(x.size() > 0, "sum: empty reduction");
  const std::int64_t n = x.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += x[i];
  if (!detail::tracked(x)) return Tensor::scalar(s);
  return x.graph()->record({1}, {s}, {x.node()},
                           [n](Graph& gr, int self, const std::vector<int>& par) {
                             double g = gr.grad_of(self)[0];
                             auto& gx = gr.accum(par[0], n);
                             for (auto& v : gx) v += g;
                           });
}

inline Tensor mean(const Tensor& x) {
  require(x.size() > 0, "mean: empty reduction");
  const std::int64_t n = x.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += x[i];
  s /= static_cast<double>(n);
  if (!detail::tracked(x)) return Tensor::scalar(s);
  return x.graph()->record({1}, {s}, {x.node()},
                           [n](Graph& gr, int self, const std::vector<int>& par) {
                             double g = gr.grad_of(self)[0] / static_cast<double>(n);
                             auto& gx = gr.accum(par[0], n);
                             for (auto& v : gx) v += g;
                           });
}

// Max over all elements; gradient routes to the argmax element only, ties
// broken by lowest flat index.
inline Tensor max_all(const Tensor& x) {
  require(x.size() > 0, "max: empty reduction");
  const std::int64_t n = x.size();
  std::int64_t arg = 0;
  double best = x[0];
  for (std::int64_t i = 1; i < n; ++i)
    if (x[i] > best) { best = x[i]; arg = i; }
  if (!detail::tracked(x)) return Tensor::scalar(best);
  return x.graph()->record({1}, {best}, {x.node()},
                           [n, arg](Graph& gr, int self, const std::vector<int>& par) {
                             double g = gr.grad_of(self)[0];
                             auto& gx = gr.accum(par[0], n);
                             gx[static_cast<std::size_t>(arg)] += g;
                           });
}

// ---------------------------------------------------------------------------
// Shape ops.

inline Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_size(shape) == x.size(),
          "reshape: size mismatch (" + shape_str(x.shape()) + " -> " + shape_str(shape) + ")");
  const std::int64_t n = x.size();
  std::vector<double> out(x.values());
  if (!detail::tracked(x)) return Tensor::from(std::move(shape), std::move(out));
  return x.graph()->record(std::move(shape), std::move(out), {x.node()},
                           [n](Graph& gr, int self, const std::vector<int>& par) {
                             const auto& go = gr.grad_of(self);
                             auto& gx = gr.accum(par[0], n);
                             for (std::int64_t i = 0; i < n; ++i)
                               gx[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)];
                           });
}

inline Tensor slice(const Tensor& x, const std::vector<int>& starts,
                    const std::vector<int>& sizes) {
  const auto& sh = x.shape();
  require(starts.size() == sh.size() && sizes.size() == sh.size(),
          "slice: starts/sizes rank mismatch for shape " + shape_str(sh));
  for (std::size_t d = 0; d < sh.size(); ++d)
    require(starts[d] >= 0 && sizes[d] >= 1 && starts[d] + sizes[d] <= sh[d],
            "slice: range out of bounds at axis " + std::to_string(d));
  Shape out_shape(sizes.begin(), sizes.end());
  std::vector<double> out(static_cast<std::size_t>(shape_size(out_shape)));
  const double* px = x.data();
  detail::for_block_runs(sh, starts, sizes,
                         [&](std::int64_t so, std::int64_t bo, std::int64_t len) {
                           std::copy(px + so, px + so + len, out.data() + bo);
                         });
  if (!detail::tracked(x)) return Tensor::from(std::move(out_shape), std::move(out));
  const std::int64_t xn = x.size();
  Shape xsh = sh;
  return x.graph()->record(
      out_shape, std::move(out), {x.node()},
      [xsh, starts, sizes, xn](Graph& gr, int self, const std::vector<int>& par) {
        const auto& go = gr.grad_of(self);
        auto& gx = gr.accum(par[0], xn);
        detail::for_block_runs(xsh, starts, sizes,
                               [&](std::int64_t so, std::int64_t bo, std::int64_t len) {
                                 for (std::int64_t k = 0; k < len; ++k)
                                   gx[static_cast<std::size_t>(so + k)] +=
                                       go[static_cast<std::size_t>(bo + k)];
                               });
      });
}

inline Tensor pad_zero(const Tensor& x, const std::vector<int>& before,
                       const std::vector<int>& after) {
  const auto& sh = x.shape();
  require(before.size() == sh.size() && after.size() == sh.size(),
          "pad_zero: pad rank mismatch for shape " + shape_str(sh));
  Shape out_shape(sh.size());
  std::vector<int> starts(sh.size()), sizes(sh.size());
  for (std::size_t d = 0; d < sh.size(); ++d) {
    require(before[d] >= 0 && after[d] >= 0, "pad_zero: negative padding");
    out_shape[d] = sh[d] + before[d] + after[d];
    starts[d] = before[d];
    sizes[d] = sh[d];
  }
  std::vector<double> out(static_cast<std::size_t>(shape_size(out_shape)), 0.0);
  const double* px = x.data();
  detail::for_block_runs(out_shape, starts, sizes,
                         [&](std::int64_t so, std::int64_t bo, std::int64_t len) {
                           std::copy(px + bo, px + bo + len, out.data() + so);
                         });
  if (!detail::tracked(x)) return Tensor::from(std::move(out_shape), std::move(out));
  const std::int64_t xn = x.size();
  return x.graph()->record(
      out_shape, std::move(out), {x.node()},
      [out_shape, starts, sizes, xn](Graph& gr, int self, const std::vector<int>& par) {
        const auto& go = gr.grad_of(self);
        auto& gx = gr.accum(par[0], xn);
        detail::for_block_runs(out_shape, starts, sizes,
                               [&](std::int64_t so, std::int64_t bo, std::int64_t len) {
                                 for (std::int64_t k = 0; k < len; ++k)
                                   gx[static_cast<std::size_t>(bo + k)] +=
                                       go[static_cast<std::size_t>(so + k)];
                               });
      });
}

// ---------------------------------------------------------------------------
// Softmax along one axis (numerically stabilized by the per-line max).

inline Tensor softmax_axis(const Tensor& x, int axis) {
  const auto& sh = x.shape();
  require(axis >= 0 && axis < static_cast<int>(sh.size()),
          "softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(sh));
  const std::int64_t n = x.size();
  const int count = sh[static_cast<std::size_t>(axis)];
  std::int64_t inner = 1;
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < sh.size(); ++d) inner *= sh[d];
  const std::int64_t outer = n / (inner * count);
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * count * inner + i;
      double m = px[base];
      for (int c = 1; c < count; ++c) m = std::max(m, px[base + c * inner]);
      double s = 0.0;
      for (int c = 0; c < count; ++c) {
        double e = std::exp(px[base + c * inner] - m);
        out[static_cast<std::size_t>(base + c * inner)] = e;
        s += e;
      }
      for (int c = 0; c < count; ++c) out[static_cast<std::size_t>(base + c * inner)] /= s;
    }
  }
  if (!detail::tracked(x)) return Tensor::from(sh, std::move(out));
  return x.graph()->record(
      sh, std::move(out), {x.node()},
      [n, count, inner, outer](Graph& gr, int self, const std::vector<int>& par) {
        const auto& go = gr.grad_of(self);
        const double* p = gr.values_of(self).data();
        auto& gx = gr.accum(par[0], n);
        for (std::int64_t o = 0; o < outer; ++o) {
          for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * count * inner + i;
            double dot = 0.0;
            for (int c = 0; c < count; ++c) {
              std::int64_t k = base + c * inner;
              dot += go[static_cast<std::size_t>(k)] * p[k];
            }
            for (int c = 0; c < count; ++c) {
              std::int64_t k = base + c * inner;
              gx[static_cast<std::size_t>(k)] += p[k] * (go[static_cast<std::size_t>(k)] - dot);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// 2-D cross-correlation, NCHW, zero padding, optional per-channel bias and
// fused leaky-relu. Gradients w.r.t. input, kernels and bias are all
// supported; untracked operands are skipped.

inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor* bias,
                     int stride, int pad, bool leaky_after = false, double slope = 0.1) {
  const auto& ish = input.shape();
  const auto& ksh = kernels.shape();
  require(ish.size() == 4 && ksh.size() == 4,
          "conv2d: expected 4-d input and kernels, got " + shape_str(ish) + " and " +
              shape_str(ksh));
  const int N = ish[0], Ci = ish[1], H = ish[2], W = ish[3];
  const int Co = ksh[0], Kc = ksh[1], Kh = ksh[2], Kw = ksh[3];
  require(Ci == Kc, "conv2d: input channels (" + std::to_string(Ci) +
                        ") do not match kernel channels (" + std::to_string(Kc) + ")");
  require(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
  if (bias)
    require(bias->size() == Co, "conv2d: bias size " + std::to_string(bias->size()) +
                                    " does not match output channels " + std::to_string(Co));
  const int Ho = (H + 2 * pad - Kh) / stride + 1;
  const int Wo = (W + 2 * pad - Kw) / stride + 1;
  require(Ho >= 1 && Wo >= 1, "conv2d: output spatial dims would be empty");

  Shape out_shape{N, Co, Ho, Wo};
  std::vector<double> out(static_cast<std::size_t>(shape_size(out_shape)), 0.0);
  const double* in = input.data();
  const double* kw = kernels.data();

  // valid output range for a given kernel tap: 0 <= o*stride + k - pad < dim
  auto lo_of = [&](int k) { return std::max(0, (pad - k + stride - 1) / stride); };

  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Co; ++co) {
      double* op = out.data() + (static_cast<std::int64_t>(n) * Co + co) * Ho * Wo;
      if (bias) {
        const double b = (*bias)[co];
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(Ho) * Wo; ++i) op[i] = b;
      }
      for (int ci = 0; ci < Ci; ++ci) {
        const double* ip = in + (static_cast<std::int64_t>(n) * Ci + ci) * H * W;
        for (int ky = 0; ky < Kh; ++ky) {
          const int oy_lo = lo_of(ky);
          const int oy_hi = std::min<int>((H - 1 - ky + pad) / stride + 1, Ho);
          for (int kx = 0; kx < Kw; ++kx) {
            const double wv = kw[((static_cast<std::int64_t>(co) * Ci + ci) * Kh + ky) * Kw + kx];
            const int ox_lo = lo_of(kx);
            const int ox_hi = std::min<int>((W - 1 - kx + pad) / stride + 1, Wo);
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const double* irow = ip + static_cast<std::int64_t>(oy * stride + ky - pad) * W;
              double* orow = op + static_cast<std::int64_t>(oy) * Wo;
              for (int ox = ox_lo; ox < ox_hi; ++ox)
                orow[ox] += wv * irow[ox * stride + kx - pad];
            }
          }
        }
      }
    }
  }
  if (leaky_after) {
    for (auto& v : out)
      if (v < 0.0) v *= slope;
  }

  Graph* g = input.graph();
  if (kernels.graph()) {
    require(!g || g == kernels.graph(), "conv2d: tensors belong to different graphs");
    g = kernels.graph();
  }
  bool ti = detail::tracked(input), tk = detail::tracked(kernels);
  bool tb = bias && detail::tracked(*bias);
  if (!g || (!ti && !tk && !tb)) return Tensor::from(std::move(out_shape), std::move(out));

  std::vector<int> parents;
  int i_at = -1, k_at = -1, b_at = -1;
  if (ti) { i_at = static_cast<int>(parents.size()); parents.push_back(input.node()); }
  if (tk) { k_at = static_cast<int>(parents.size()); parents.push_back(kernels.node()); }
  if (tb) { b_at = static_cast<int>(parents.size()); parents.push_back(bias->node()); }

  auto din = input.shared_values();
  auto dkr = kernels.shared_values();
  const std::int64_t in_size = input.size(), k_size = kernels.size();
  return g->record(
      out_shape, std::move(out), std::move(parents),
      [N, Ci, H, W, Co, Kh, Kw, Ho, Wo, stride, pad, leaky_after, slope, i_at, k_at, b_at,
       din, dkr, in_size, k_size](Graph& gr, int self, const std::vector<int>& par) {
        const auto& go_raw = gr.grad_of(self);
        const double* ov = gr.values_of(self).data();
        // fused activation: fold the leaky slope into the upstream grad
        std::vector<double> go_buf;
        const double* go = go_raw.data();
        if (leaky_after) {
          go_buf.resize(go_raw.size());
          for (std::size_t i = 0; i < go_raw.size(); ++i)
            go_buf[i] = go_raw[i] * (ov[i] > 0.0 ? 1.0 : slope);
          go = go_buf.data();
        }
        const double* in = din->data();
        const double* kw = dkr->data();
        if (i_at >= 0) {
          auto& gi = gr.accum(par[static_cast<std::size_t>(i_at)], in_size);
          for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co) {
              const double* gp = go + (static_cast<std::int64_t>(n) * Co + co) * Ho * Wo;
              for (int ci = 0; ci < Ci; ++ci) {
                double* dst = gi.data() + (static_cast<std::int64_t>(n) * Ci + ci) * H * W;
                for (int ky = 0; ky < Kh; ++ky) {
                  const int oy_lo = std::max(0, (pad - ky + stride - 1) / stride);
                  const int oy_hi = std::min<int>((H - 1 - ky + pad) / stride + 1, Ho);
                  for (int kx = 0; kx < Kw; ++kx) {
                    const double wv =
                        kw[((static_cast<std::int64_t>(co) * Ci + ci) * Kh + ky) * Kw + kx];
                    const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
                    const int ox_hi = std::min<int>((W - 1 - kx + pad) / stride + 1, Wo);
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                      double* drow = dst + static_cast<std::int64_t>(oy * stride + ky - pad) * W;
                      const double* grow = gp + static_cast<std::int64_t>(oy) * Wo;
                      for (int ox = ox_lo; ox < ox_hi; ++ox)
                        drow[ox * stride + kx - pad] += wv * grow[ox];
                    }
                  }
                }
              }
            }
        }
        if (k_at >= 0) {
          auto& gk = gr.accum(par[static_cast<std::size_t>(k_at)], k_size);
          for (int co = 0; co < Co; ++co)
            for (int ci = 0; ci < Ci; ++ci)
              for (int ky = 0; ky < Kh; ++ky)
                for (int kx = 0; kx < Kw; ++kx) {
                  double acc = 0.0;
                  const int oy_lo = std::max(0, (pad - ky + stride - 1) / stride);
                  const int oy_hi = std::min<int>((H - 1 - ky + pad) / stride + 1, Ho);
                  const int ox_lo = std::max(0, (pad - kx + stride - 1) / stride);
                  const int ox_hi = std::min<int>((W - 1 - kx + pad) / stride + 1, Wo);
                  for (int n = 0; n < N; ++n) {
                    const double* gp = go + (static_cast<std::int64_t>(n) * Co + co) * Ho * Wo;
                    const double* ip = in + (static_cast<std::int64_t>(n) * Ci + ci) * H * W;
                    for (int oy = oy_lo; oy < oy_hi; ++oy) {
                      const double* irow =
                          ip + static_cast<std::int64_t>(oy * stride + ky - pad) * W;
                      const double* grow = gp + static_cast<std::int64_t>(oy) * Wo;
                      for (int ox = ox_lo; ox < ox_hi; ++ox)
                        acc += grow[ox] * irow[ox * stride + kx - pad];
                    }
                  }
                  gk[static_cast<std::size_t>(
                      ((static_cast<std::int64_t>(co) * Ci + ci) * Kh + ky) * Kw + kx)] += acc;
                }
        }
        if (b_at >= 0) {
          auto& gb = gr.accum(par[static_cast<std::size_t>(b_at)], Co);
          for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co) {
              const double* gp = go + (static_cast<std::int64_t>(n) * Co + co) * Ho * Wo;
              double acc = 0.0;
              for (std::int64_t i = 0; i < static_cast<std::int64_t>(Ho) * Wo; ++i) acc += gp[i];
              gb[static_cast<std::size_t>(co)] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Differentiable bilinear warp. `affine` = {a,b,c,d,e,f} maps source pixel
// centers to output pixel centers: x_out = a*x + b*y + c, y_out = d*x + e*y + f.
// The output grid is sampled through the inverse mapping; samples outside the
// source read as zero. Differentiable w.r.t. the source image only.

inline Tensor bilinear_warp(const Tensor& src, const std::array<double, 6>& affine,
                            int out_h, int out_w) {
  const auto& sh = src.shape();
  require(sh.size() == 3, "bilinear_warp: expected CHW source, got " + shape_str(sh));
  const int C = sh[0], H = sh[1], W = sh[2];
  const double a = affine[0], b = affine[1], c = affine[2];
  const double d = affine[3], e = affine[4], f = affine[5];
  const double det = a * e - b * d;
  require(std::abs(det) > 1e-12, "bilinear_warp: singular affine matrix");
  // inverse map: out (x,y) -> src (u,v)
  const double ia = e / det, ib = -b / det, id = -d / det, ie = a / det;

  // restrict the loop to the forward image of the sampleable source rect
  double xs[4], ys[4];
  const double corners[4][2] = {{-1.0, -1.0},
                                {static_cast<double>(W), -1.0},
                                {-1.0, static_cast<double>(H)},
                                {static_cast<double>(W), static_cast<double>(H)}};
  for (int k = 0; k < 4; ++k) {
    xs[k] = a * corners[k][0] + b * corners[k][1] + c;
    ys[k] = d * corners[k][0] + e * corners[k][1] + f;
  }
  const int x_lo = std::max(0, static_cast<int>(std::floor(*std::min_element(xs, xs + 4))));
  const int x_hi = std::min(out_w, static_cast<int>(std::ceil(*std::max_element(xs, xs + 4))) + 1);
  const int y_lo = std::max(0, static_cast<int>(std::floor(*std::min_element(ys, ys + 4))));
  const int y_hi = std::min(out_h, static_cast<int>(std::ceil(*std::max_element(ys, ys + 4))) + 1);

  Shape out_shape{C, out_h, out_w};
  std::vector<double> out(static_cast<std::size_t>(shape_size(out_shape)), 0.0);
  const double* sp = src.data();
  for (int y = y_lo; y < y_hi; ++y) {
    for (int x = x_lo; x < x_hi; ++x) {
      const double u = ia * (x - c) + ib * (y - f);
      const double v = id * (x - c) + ie * (y - f);
      const int x0 = static_cast<int>(std::floor(u));
      const int y0 = static_cast<int>(std::floor(v));
      if (x0 < -1 || x0 >= W || y0 < -1 || y0 >= H) continue;
      const double fx = u - x0, fy = v - y0;
      const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
      const double w01 = (1 - fx) * fy, w11 = fx * fy;
      const bool i00 = x0 >= 0 && y0 >= 0;
      const bool i10 = x0 + 1 < W && y0 >= 0;
      const bool i01 = x0 >= 0 && y0 + 1 < H;
      const bool i11 = x0 + 1 < W && y0 + 1 < H;
      for (int ch = 0; ch < C; ++ch) {
        const double* plane = sp + static_cast<std::int64_t>(ch) * H * W;
        double acc = 0.0;
        if (i00) acc += w00 * plane[static_cast<std::int64_t>(y0) * W + x0];
        if (i10) acc += w10 * plane[static_cast<std::int64_t>(y0) * W + x0 + 1];
        if (i01) acc += w01 * plane[static_cast<std::int64_t>(y0 + 1) * W + x0];
        if (i11) acc += w11 * plane[static_cast<std::int64_t>(y0 + 1) * W + x0 + 1];
        out[(static_cast<std::int64_t>(ch) * out_h + y) * out_w + x] = acc;
      }
    }
  }
  if (!detail::tracked(src)) return Tensor::from(std::move(out_shape), std::move(out));

  const std::int64_t src_size = src.size();
  return src.graph()->record(
      out_shape, std::move(out), {src.node()},
      [=](Graph& gr, int self, const std::vector<int>& par) {
        const auto& go = gr.grad_of(self);
        auto& gs = gr.accum(par[0], src_size);
        for (int y = y_lo; y < y_hi; ++y) {
          for (int x = x_lo; x < x_hi; ++x) {
            const double u = ia * (x - c) + ib * (y - f);
            const double v = id * (x - c) + ie * (y - f);
            const int x0 = static_cast<int>(std::floor(u));
            const int y0 = static_cast<int>(std::floor(v));
            if (x0 < -1 || x0 >= W || y0 < -1 || y0 >= H) continue;
            const double fx = u - x0, fy = v - y0;
            const double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
            const double w01 = (1 - fx) * fy, w11 = fx * fy;
            for (int ch = 0; ch < C; ++ch) {
              const double g = go[(static_cast<std::int64_t>(ch) * out_h + y) * out_w + x];
              if (g == 0.0) continue;
              double* plane = gs.data() + static_cast<std::int64_t>(ch) * H * W;
              if (x0 >= 0 && y0 >= 0) plane[static_cast<std::int64_t>(y0) * W + x0] += g * w00;
              if (x0 + 1 < W && y0 >= 0)
                plane[static_cast<std::int64_t>(y0) * W + x0 + 1] += g * w10;
              if (x0 >= 0 && y0 + 1 < H)
                plane[static_cast<std::int64_t>(y0 + 1) * W + x0] += g * w01;
              if (x0 + 1 < W && y0 + 1 < H)
                plane[static_cast<std::int64_t>(y0 + 1) * W + x0 + 1] += g * w11;
            }
          }
        }
      });
}

}  // namespace advart
