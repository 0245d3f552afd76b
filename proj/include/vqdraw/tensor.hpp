#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "vqdraw/errors.hpp"
#include "vqdraw/kernels.hpp"

namespace vqdraw {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {
inline thread_local int g_no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::g_no_grad_depth == 0; }

// Scoped suppression of graph recording; encode/decode at inference time
// run under one of these.
struct NoGradGuard {
  NoGradGuard() { ++detail::g_no_grad_depth; }
  ~NoGradGuard() { --detail::g_no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> v;
  std::vector<T> g;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static Tensor full(Shape shape, T value) {
    check_shape(shape);
    auto n = std::make_shared<Node<T>>();
    n->v.assign(shape_numel(shape), value);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from_data(Shape shape, std::vector<T> data) {
    check_shape(shape);
    if ((long)data.size() != shape_numel(shape))
      throw ShapeError("from_data: " + std::to_string(data.size()) +
                       " elements for shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->v = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor scalar(T value) { return full({1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  long numel() const { return (long)node_->v.size(); }
  bool is_scalar() const { return node_->v.size() == 1; }

  const std::vector<T>& values() const { return node_->v; }
  std::vector<T>& data() { return node_->v; }  // leaf mutation only

  T value() const {
    if (!is_scalar()) throw ShapeError("value(): tensor is not scalar");
    return node_->v[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  const std::vector<T>& grad() const {
    if (node_->g.size() != node_->v.size())
      throw std::logic_error("grad(): no gradient accumulated");
    return node_->g;
  }
  bool has_grad() const { return node_->g.size() == node_->v.size(); }
  void zero_grad() { node_->g.clear(); }

  // Reverse-mode sweep from a scalar loss. Visits each recorded node once,
  // in reverse topological order; fan-out accumulates additively.
  void backward() const {
    if (!is_scalar())
      throw ShapeError("backward(): differentiation target must be scalar, got " +
                       shape_str(node_->shape));
    std::vector<Node<T>*> order;
    topo_sort(node_.get(), order);
    node_->ensure_grad();
    node_->g[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward_fn && n->g.size() == n->v.size()) n->backward_fn(*n);
    }
  }

  std::shared_ptr<Node<T>> node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

 private:
  static void check_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (int d : s)
      if (d <= 0) throw ShapeError("tensor extents must be positive: " + shape_str(s));
  }

  static void topo_sort(Node<T>* root, std::vector<Node<T>*>& order) {
    std::unordered_set<Node<T>*> done;
    // Iterative DFS; second visit of a frame emits the node.
    std::vector<std::pair<Node<T>*, size_t>> stack{{root, 0}};
    std::unordered_set<Node<T>*> on_stack{root};
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node<T>* p = n->parents[idx++].get();
        if (!done.count(p) && !on_stack.count(p)) {
          on_stack.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        done.insert(n);
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<Node<T>> node_;
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T x : t.values())
    if (!std::isfinite((double)x)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Op helpers

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->node()->requires_grad) return true;
  return false;
}

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> vals, bool record,
                  std::vector<std::shared_ptr<Node<T>>> parents,
                  std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->v = std::move(vals);
  if (record) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
void accumulate(Node<T>& p, const std::vector<T>& delta) {
  p.ensure_grad();
  for (size_t i = 0; i < delta.size(); ++i) p.g[i] += delta[i];
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  std::vector<T> out(a.values());
  for (long i = 0; i < a.numel(); ++i) out[i] += b.values()[i];
  bool rec = detail::should_record<T>({&a, &b});
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(out), rec, {an, bn},
                            [an, bn](Node<T>& n) {
                              if (an->requires_grad) detail::accumulate(*an, n.g);
                              if (bn->requires_grad) detail::accumulate(*bn, n.g);
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "subtract: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  std::vector<T> out(a.values());
  for (long i = 0; i < a.numel(); ++i) out[i] -= b.values()[i];
  bool rec = detail::should_record<T>({&a, &b});
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(out), rec, {an, bn},
                            [an, bn](Node<T>& n) {
                              if (an->requires_grad) detail::accumulate(*an, n.g);
                              if (bn->requires_grad) {
                                bn->ensure_grad();
                                for (size_t i = 0; i < n.g.size(); ++i)
                                  bn->g[i] -= n.g[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.values());
  for (T& x : out) x *= c;
  bool rec = detail::should_record<T>({&a});
  auto an = a.node();
  return detail::make_op<T>(a.shape(), std::move(out), rec, {an},
                            [an, c](Node<T>& n) {
                              an->ensure_grad();
                              for (size_t i = 0; i < n.g.size(); ++i)
                                an->g[i] += c * n.g[i];
                            });
}

// b broadcast over the trailing dims of x: y[c, rest] = x[c, rest] + b[c].
template <typename T>
Tensor<T> add_channel(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require(b.shape().size() == 1 && b.shape()[0] == x.shape()[0],
                  "add-channel: bias " + shape_str(b.shape()) +
                      " does not match leading extent of " + shape_str(x.shape()));
  const int c = x.shape()[0];
  const long inner = x.numel() / c;
  std::vector<T> out(x.values());
  for (int ch = 0; ch < c; ++ch)
    for (long i = 0; i < inner; ++i) out[ch * inner + i] += b.values()[ch];
  bool rec = detail::should_record<T>({&x, &b});
  auto xn = x.node(), bn = b.node();
  return detail::make_op<T>(
      x.shape(), std::move(out), rec, {xn, bn}, [xn, bn, c, inner](Node<T>& n) {
        if (xn->requires_grad) detail::accumulate(*xn, n.g);
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (long i = 0; i < inner; ++i) acc += n.g[ch * inner + i];
            bn->g[ch] += acc;
          }
        }
      });
}

// Per-channel multiplicative mask: y[c, rest] = x[c, rest] * m[c].
template <typename T>
Tensor<T> mask_channels(const Tensor<T>& x, const Tensor<T>& m) {
  detail::require(m.shape().size() == 1 && m.shape()[0] == x.shape()[0],
                  "channel-mask-multiply: mask " + shape_str(m.shape()) +
                      " does not match leading extent of " + shape_str(x.shape()));
  const int c = x.shape()[0];
  const long inner = x.numel() / c;
  std::vector<T> out(x.values());
  for (int ch = 0; ch < c; ++ch)
    for (long i = 0; i < inner; ++i) out[ch * inner + i] *= m.values()[ch];
  bool rec = detail::should_record<T>({&x, &m});
  auto xn = x.node(), mn = m.node();
  return detail::make_op<T>(
      x.shape(), std::move(out), rec, {xn, mn}, [xn, mn, c, inner](Node<T>& n) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (int ch = 0; ch < c; ++ch)
            for (long i = 0; i < inner; ++i)
              xn->g[ch * inner + i] += n.g[ch * inner + i] * mn->v[ch];
        }
        if (mn->requires_grad) {
          mn->ensure_grad();
          for (int ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (long i = 0; i < inner; ++i)
              acc += n.g[ch * inner + i] * xn->v[ch * inner + i];
            mn->g[ch] += acc;
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (T& v : out) v = v > T(0) ? v : T(0);
  bool rec = detail::should_record<T>({&x});
  auto xn = x.node();
  return detail::make_op<T>(x.shape(), std::move(out), rec, {xn},
                            [xn](Node<T>& n) {
                              xn->ensure_grad();
                              // zero subgradient at the kink
                              for (size_t i = 0; i < n.g.size(); ++i)
                                if (xn->v[i] > T(0)) xn->g[i] += n.g[i];
                            });
}

// ---------------------------------------------------------------------------
// matmul: a is [m,k]; b is [k,n] or a vector [k] (treated as n = 1).

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape().size() == 2,
                  "matrix-multiply: lhs must be rank 2, got " + shape_str(a.shape()));
  detail::require(b.shape().size() == 1 || b.shape().size() == 2,
                  "matrix-multiply: rhs must be rank 1 or 2, got " +
                      shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1];
  const bool vec = b.shape().size() == 1;
  const int n = vec ? 1 : b.shape()[1];
  detail::require(b.shape()[0] == k, "matrix-multiply: inner extents differ, " +
                                         shape_str(a.shape()) + " vs " +
                                         shape_str(b.shape()));
  std::vector<T> out((size_t)m * n);
  kernels::matmul(a.values().data(), b.values().data(), out.data(), m, k, n);
  bool rec = detail::should_record<T>({&a, &b});
  auto an = a.node(), bn = b.node();
  Shape oshape = vec ? Shape{m} : Shape{m, n};
  return detail::make_op<T>(
      std::move(oshape), std::move(out), rec, {an, bn},
      [an, bn, m, k, n](Node<T>& node) {
        if (an->requires_grad) {
          std::vector<T> da((size_t)m * k);
          kernels::matmul(node.g.data(), bn->v.data(), da.data(), m, n, k, false,
                          true);
          detail::accumulate(*an, da);
        }
        if (bn->requires_grad) {
          std::vector<T> db((size_t)k * n);
          kernels::matmul(an->v.data(), node.g.data(), db.data(), k, m, n, true,
                          false);
          detail::accumulate(*bn, db);
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions (single example, CHW)

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  detail::require(x.shape().size() == 3, "2-D convolution: input must be CHW, got " +
                                             shape_str(x.shape()));
  detail::require(w.shape().size() == 4,
                  "2-D convolution: weight must be [out,in,kh,kw], got " +
                      shape_str(w.shape()));
  detail::require(w.shape()[1] == x.shape()[0],
                  "2-D convolution: channel mismatch " + shape_str(x.shape()) +
                      " vs " + shape_str(w.shape()));
  kernels::Conv2dDims d;
  d.ci = x.shape()[0];
  d.h = x.shape()[1];
  d.w = x.shape()[2];
  d.co = w.shape()[0];
  d.kh = w.shape()[2];
  d.kw = w.shape()[3];
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  detail::require(d.oh > 0 && d.ow > 0, "2-D convolution: kernel " +
                                            shape_str(w.shape()) +
                                            " larger than padded input " +
                                            shape_str(x.shape()));
  std::vector<T> out((size_t)d.co * d.oh * d.ow);
  kernels::conv2d_fwd(x.values().data(), w.values().data(), out.data(), d);
  bool rec = detail::should_record<T>({&x, &w});
  auto xn = x.node(), wn = w.node();
  return detail::make_op<T>(
      Shape{d.co, d.oh, d.ow}, std::move(out), rec, {xn, wn},
      [xn, wn, d](Node<T>& n) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          kernels::conv2d_bwd_input(n.g.data(), wn->v.data(), xn->g.data(), d);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          kernels::conv2d_bwd_weight(n.g.data(), xn->v.data(), wn->g.data(), d);
        }
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, int stride,
                           int pad) {
  detail::require(x.shape().size() == 3,
                  "2-D transposed convolution: input must be CHW, got " +
                      shape_str(x.shape()));
  detail::require(w.shape().size() == 4,
                  "2-D transposed convolution: weight must be [in,out,kh,kw], got " +
                      shape_str(w.shape()));
  detail::require(w.shape()[0] == x.shape()[0],
                  "2-D transposed convolution: channel mismatch " +
                      shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  kernels::TConv2dDims d;
  d.ci = x.shape()[0];
  d.h = x.shape()[1];
  d.w = x.shape()[2];
  d.co = w.shape()[1];
  d.kh = w.shape()[2];
  d.kw = w.shape()[3];
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h - 1) * stride - 2 * pad + d.kh;
  d.ow = (d.w - 1) * stride - 2 * pad + d.kw;
  detail::require(d.oh > 0 && d.ow > 0,
                  "2-D transposed convolution: degenerate output for input " +
                      shape_str(x.shape()));
  std::vector<T> out((size_t)d.co * d.oh * d.ow);
  kernels::tconv2d_fwd(x.values().data(), w.values().data(), out.data(), d);
  bool rec = detail::should_record<T>({&x, &w});
  auto xn = x.node(), wn = w.node();
  return detail::make_op<T>(
      Shape{d.co, d.oh, d.ow}, std::move(out), rec, {xn, wn},
      [xn, wn, d](Node<T>& n) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          kernels::tconv2d_bwd_input(n.g.data(), wn->v.data(), xn->g.data(), d);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          kernels::tconv2d_bwd_weight(n.g.data(), xn->v.data(), wn->g.data(), d);
        }
      });
}

// ---------------------------------------------------------------------------
// Group normalization over a CHW (or C) tensor: each of `groups` channel
// groups is normalized to zero mean / unit variance, then scaled and shifted
// per channel.

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, int groups, T eps = T(1e-5)) {
  const int c = x.shape()[0];
  detail::require(groups >= 1 && c % groups == 0,
                  "group-normalization: " + std::to_string(groups) +
                      " groups do not divide " + std::to_string(c) + " channels");
  detail::require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                  "group-normalization: scale/shift must be shape [" +
                      std::to_string(c) + "], got " + shape_str(gamma.shape()) +
                      " and " + shape_str(beta.shape()));
  const long inner = x.numel() / c;
  const int cpg = c / groups;
  const long gsize = cpg * inner;

  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(groups);
  std::vector<T> out(x.numel());
  for (int g = 0; g < groups; ++g) {
    const long base = (long)g * gsize;
    T mean = 0;
    for (long i = 0; i < gsize; ++i) mean += x.values()[base + i];
    mean /= (T)gsize;
    T var = 0;
    for (long i = 0; i < gsize; ++i) {
      const T dlt = x.values()[base + i] - mean;
      var += dlt * dlt;
    }
    var /= (T)gsize;
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[g] = is;
    for (long i = 0; i < gsize; ++i)
      (*xhat)[base + i] = (x.values()[base + i] - mean) * is;
  }
  for (int ch = 0; ch < c; ++ch)
    for (long i = 0; i < inner; ++i)
      out[ch * inner + i] =
          gamma.values()[ch] * (*xhat)[ch * inner + i] + beta.values()[ch];

  bool rec = detail::should_record<T>({&x, &gamma, &beta});
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_op<T>(
      x.shape(), std::move(out), rec, {xn, gn, bn},
      [xn, gn, bn, xhat, inv_std, groups, cpg, inner, gsize](Node<T>& n) {
        const int c = cpg * groups;
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (int ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (long i = 0; i < inner; ++i)
              acc += n.g[ch * inner + i] * (*xhat)[ch * inner + i];
            gn->g[ch] += acc;
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (long i = 0; i < inner; ++i) acc += n.g[ch * inner + i];
            bn->g[ch] += acc;
          }
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (int g = 0; g < groups; ++g) {
            const long base = (long)g * gsize;
            T sum_dxh = 0, sum_dxh_xh = 0;
            for (long i = 0; i < gsize; ++i) {
              const long idx = base + i;
              const int ch = (int)(idx / inner);
              const T dxh = n.g[idx] * gn->v[ch];
              sum_dxh += dxh;
              sum_dxh_xh += dxh * (*xhat)[idx];
            }
            const T m1 = sum_dxh / (T)gsize;
            const T m2 = sum_dxh_xh / (T)gsize;
            for (long i = 0; i < gsize; ++i) {
              const long idx = base + i;
              const int ch = (int)(idx / inner);
              const T dxh = n.g[idx] * gn->v[ch];
              xn->g[idx] += (*inv_std)[g] * (dxh - m1 - (*xhat)[idx] * m2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "mean-squared-error: shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  const long n = a.numel();
  T acc = 0;
  for (long i = 0; i < n; ++i) {
    const T dlt = a.values()[i] - b.values()[i];
    acc += dlt * dlt;
  }
  acc /= (T)n;
  bool rec = detail::should_record<T>({&a, &b});
  auto an = a.node(), bn = b.node();
  return detail::make_op<T>(
      Shape{1}, {acc}, rec, {an, bn}, [an, bn, n](Node<T>& node) {
        const T s = node.g[0] * T(2) / (T)n;
        if (an->requires_grad) {
          an->ensure_grad();
          for (long i = 0; i < n; ++i) an->g[i] += s * (an->v[i] - bn->v[i]);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (long i = 0; i < n; ++i) bn->g[i] -= s * (an->v[i] - bn->v[i]);
        }
      });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const long n = x.numel();
  T acc = 0;
  for (T v : x.values()) acc += v;
  acc /= (T)n;
  bool rec = detail::should_record<T>({&x});
  auto xn = x.node();
  return detail::make_op<T>(Shape{1}, {acc}, rec, {xn}, [xn, n](Node<T>& node) {
    xn->ensure_grad();
    const T s = node.g[0] / (T)n;
    for (long i = 0; i < n; ++i) xn->g[i] += s;
  });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  detail::require(shape_numel(new_shape) == x.numel(),
                  "reshape: cannot view " + shape_str(x.shape()) + " as " +
                      shape_str(new_shape));
  bool rec = detail::should_record<T>({&x});
  auto xn = x.node();
  return detail::make_op<T>(std::move(new_shape), x.values(), rec, {xn},
                            [xn](Node<T>& n) { detail::accumulate(*xn, n.g); });
}

// Concatenate along the leading axis; trailing extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concatenate: no inputs");
  Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
  int lead = 0;
  std::vector<T> out;
  bool rec = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    detail::require(t == trailing, "concatenate: trailing extents differ, " +
                                       shape_str(parts[0].shape()) + " vs " +
                                       shape_str(p.shape()));
    lead += p.shape()[0];
    out.insert(out.end(), p.values().begin(), p.values().end());
    rec = rec || (grad_enabled() && p.node()->requires_grad);
    parents.push_back(p.node());
  }
  Shape oshape{lead};
  oshape.insert(oshape.end(), trailing.begin(), trailing.end());
  auto parents_copy = parents;
  return detail::make_op<T>(
      std::move(oshape), std::move(out), rec, std::move(parents),
      [parents_copy](Node<T>& n) {
        size_t off = 0;
        for (const auto& p : parents_copy) {
          if (p->requires_grad) {
            p->ensure_grad();
            for (size_t i = 0; i < p->v.size(); ++i) p->g[i] += n.g[off + i];
          }
          off += p->v.size();
        }
      });
}

// Contiguous slice along the leading axis.
template <typename T>
Tensor<T> slice0(const Tensor<T>& x, int offset, int count) {
  detail::require(offset >= 0 && count > 0 && offset + count <= x.shape()[0],
                  "slice: range [" + std::to_string(offset) + "," +
                      std::to_string(offset + count) + ") out of " +
                      shape_str(x.shape()));
  const long inner = x.numel() / x.shape()[0];
  Shape oshape = x.shape();
  oshape[0] = count;
  std::vector<T> out(x.values().begin() + offset * inner,
                     x.values().begin() + (offset + count) * inner);
  bool rec = detail::should_record<T>({&x});
  auto xn = x.node();
  return detail::make_op<T>(std::move(oshape), std::move(out), rec, {xn},
                            [xn, offset, inner](Node<T>& n) {
                              xn->ensure_grad();
                              const long base = offset * inner;
                              for (size_t i = 0; i < n.g.size(); ++i)
                                xn->g[base + i] += n.g[i];
                            });
}

}  // namespace vqdraw
