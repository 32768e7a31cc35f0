#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "diffpf/kernels.hpp"

// Dense row-major tensors with reverse-mode differentiation. A Tape records
// one backward closure per executed op, in execution order; the backward sweep
// replays them once, in reverse. Ops record only while a tape is active on the
// current thread, so inference passes are plain arithmetic. Gradient buffers
// are allocated on first touch; a tensor the loss never reaches keeps an empty
// buffer and its producers are skipped.

namespace diffpf {

using i64 = std::int64_t;
using Shape = std::vector<i64>;

inline i64 shape_numel(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> v;
  std::vector<T> g;  // empty until something accumulates into it
  bool requires_grad = false;

  void ensure_grad() {
    if (g.empty()) g.assign(v.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<T> vals, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<i64>(vals.size()))
      throw std::invalid_argument("tensor: " + std::to_string(vals.size()) +
                                  " values for shape " + shape_str(shape));
    d_ = std::make_shared<TensorData<T>>();
    d_->shape = std::move(shape);
    d_->v = std::move(vals);
    d_->requires_grad = requires_grad;
  }

  static Tensor scalar(T val) { return Tensor({1}, {val}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  i64 numel() const { return static_cast<i64>(d_->v.size()); }
  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  std::span<T> values() { return d_->v; }
  std::span<const T> values() const { return d_->v; }
  std::span<T> grad() { return d_->g; }
  std::span<const T> grad() const { return d_->g; }
  bool has_grad() const { return !d_->g.empty(); }
  void ensure_grad() { d_->ensure_grad(); }
  void zero_grad() { d_->g.clear(); }

  T item() const {
    if (numel() != 1)
      throw std::invalid_argument("item: tensor has shape " +
                                  shape_str(d_->shape));
    return d_->v[0];
  }

  std::shared_ptr<TensorData<T>> ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <class T>
Tensor<T> zeros_tensor(Shape shape, bool requires_grad = false) {
  const i64 n = shape_numel(shape);
  return Tensor<T>(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <class T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every recorded closure once, newest
  // first. Recording order is a topological order of the forward graph, so
  // each node's output gradient is complete before its closure runs.
  void backward_from(Tensor<T> loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(loss.shape()));
    loss.ensure_grad();
    loss.grad()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
};

template <class T>
inline Tape<T>*& tape_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}

template <class T>
inline Tape<T>* active_tape() {
  return tape_slot<T>();
}

// RAII: activates a tape on this thread for the scope's lifetime.
template <class T>
struct TapeGuard {
  explicit TapeGuard(Tape<T>& t) : prev(tape_slot<T>()) {
    tape_slot<T>() = &t;
  }
  ~TapeGuard() { tape_slot<T>() = prev; }
  TapeGuard(const TapeGuard&) = delete;
  TapeGuard& operator=(const TapeGuard&) = delete;
  Tape<T>* prev;
};

namespace detail {

template <class T>
void accumulate(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops; add/sub/mul broadcast a single-element operand, nothing else

namespace detail {

enum class BinKind { Add, Sub, Mul };

template <class T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinKind kind,
                    const char* name) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar)
    throw std::invalid_argument(std::string(name) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));

  const Shape out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  const i64 n = shape_numel(out_shape);
  std::vector<T> out(n);
  auto av = a.values();
  auto bv = b.values();
  for (i64 i = 0; i < n; ++i) {
    const T x = av[a_scalar ? 0 : i];
    const T y = bv[b_scalar ? 0 : i];
    out[i] = kind == BinKind::Add ? x + y
             : kind == BinKind::Sub ? x - y
                                    : x * y;
  }
  Tensor<T> res(out_shape, std::move(out));

  Tape<T>* tp = active_tape<T>();
  if (tp && (a.requires_grad() || b.requires_grad())) {
    res.set_requires_grad(true);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = res.ptr();
    tp->record([ad, bd, od, kind, a_scalar, b_scalar, n] {
      if (od->g.empty()) return;
      const auto& g = od->g;
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (i64 i = 0; i < n; ++i) {
          const T w = kind == BinKind::Mul ? bd->v[b_scalar ? 0 : i] : T(1);
          ad->g[a_scalar ? 0 : i] += g[i] * w;
        }
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (i64 i = 0; i < n; ++i) {
          T w;
          if (kind == BinKind::Mul)
            w = ad->v[a_scalar ? 0 : i];
          else
            w = kind == BinKind::Sub ? T(-1) : T(1);
          bd->g[b_scalar ? 0 : i] += g[i] * w;
        }
      }
    });
  }
  return res;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, detail::BinKind::Add, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, detail::BinKind::Sub, "sub");
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, detail::BinKind::Mul, "mul");
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  const i64 n = a.numel();
  std::vector<T> out(n);
  auto av = a.values();
  for (i64 i = 0; i < n; ++i) out[i] = av[i] * c;
  Tensor<T> res(a.shape(), std::move(out));
  Tape<T>* tp = active_tape<T>();
  if (tp && a.requires_grad()) {
    res.set_requires_grad(true);
    auto ad = a.ptr();
    auto od = res.ptr();
    tp->record([ad, od, c, n] {
      if (od->g.empty()) return;
      ad->ensure_grad();
      for (i64 i = 0; i < n; ++i) ad->g[i] += od->g[i] * c;
    });
  }
  return res;
}

namespace detail {

template <class T>
inline T sigmoid_stable(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  const i64 n = a.numel();
  std::vector<T> out(n);
  auto av = a.values();
  for (i64 i = 0; i < n; ++i) out[i] = fwd(av[i]);
  Tensor<T> res(a.shape(), std::move(out));
  Tape<T>* tp = active_tape<T>();
  if (tp && a.requires_grad()) {
    res.set_requires_grad(true);
    auto ad = a.ptr();
    auto od = res.ptr();
    tp->record([ad, od, bwd, n] {
      if (od->g.empty()) return;
      ad->ensure_grad();
      for (i64 i = 0; i < n; ++i)
        ad->g[i] += od->g[i] * bwd(ad->v[i], od->v[i]);
    });
  }
  return res;
}

}  // namespace detail

// x * sigmoid(x)
template <class T>
Tensor<T> silu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x * detail::sigmoid_stable(x); },
      [](T x, T) {
        const T s = detail::sigmoid_stable(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

template <class T>
Tensor<T> exp_elem(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// ---------------------------------------------------------------------------
// contractions

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const i64 m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(static_cast<std::size_t>(m * n));
  kernels::matmul(a.values().data(), b.values().data(), out.data(), m, k, n);
  Tensor<T> res({m, n}, std::move(out));

  Tape<T>* tp = active_tape<T>();
  if (tp && (a.requires_grad() || b.requires_grad())) {
    res.set_requires_grad(true);
    auto ad = a.ptr();
    auto bd = b.ptr();
    auto od = res.ptr();
    tp->record([ad, bd, od, m, k, n] {
      if (od->g.empty()) return;
      if (ad->requires_grad) {
        ad->ensure_grad();
        // dA = dY · B^T
        kernels::matmul(od->g.data(), bd->v.data(), ad->g.data(), m, n, k,
                        false, true, true);
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        // dB = A^T · dY
        kernels::matmul(ad->v.data(), od->g.data(), bd->g.data(), k, m, n,
                        true, false, true);
      }
    });
  }
  return res;
}

// input [cin,h,w], kernel [cout,cin,kh,kw]; cross-correlation, zero padding
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, i64 stride, i64 pad) {
  if (x.shape().size() != 3 || k.shape().size() != 4)
    throw std::invalid_argument("conv2d: want input rank 3 and kernel rank 4, got " +
                                shape_str(x.shape()) + " and " +
                                shape_str(k.shape()));
  const auto g = kernels::conv2d_geometry(x.shape()[0], x.shape()[1],
                                          x.shape()[2], k.shape()[0],
                                          k.shape()[1], k.shape()[2],
                                          k.shape()[3], stride, pad);
  std::vector<T> out(static_cast<std::size_t>(g.cout * g.ho * g.wo));
  kernels::conv2d_forward(x.values().data(), k.values().data(), out.data(), g);
  Tensor<T> res({g.cout, g.ho, g.wo}, std::move(out));

  Tape<T>* tp = active_tape<T>();
  if (tp && (x.requires_grad() || k.requires_grad())) {
    res.set_requires_grad(true);
    auto xd = x.ptr();
    auto kd = k.ptr();
    auto od = res.ptr();
    tp->record([xd, kd, od, g] {
      if (od->g.empty()) return;
      if (xd->requires_grad) {
        xd->ensure_grad();
        kernels::conv2d_backward_input(od->g.data(), kd->v.data(),
                                       xd->g.data(), g);
      }
      if (kd->requires_grad) {
        kd->ensure_grad();
        kernels::conv2d_backward_kernel(od->g.data(), xd->v.data(),
                                        kd->g.data(), g);
      }
    });
  }
  return res;
}

// y[c,h,w] = x[c,h,w] + b[c]
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.shape().size() != 3 || b.shape().size() != 1 ||
      b.shape()[0] != x.shape()[0])
    throw std::invalid_argument("add_channel_bias: shapes " +
                                shape_str(x.shape()) + " vs " +
                                shape_str(b.shape()));
  const i64 c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  std::vector<T> out(x.values().begin(), x.values().end());
  for (i64 ci = 0; ci < c; ++ci) {
    const T bias = b.values()[ci];
    for (i64 i = 0; i < hw; ++i) out[ci * hw + i] += bias;
  }
  Tensor<T> res(x.shape(), std::move(out));
  Tape<T>* tp = active_tape<T>();
  if (tp && (x.requires_grad() || b.requires_grad())) {
    res.set_requires_grad(true);
    auto xd = x.ptr();
    auto bd = b.ptr();
    auto od = res.ptr();
    tp->record([xd, bd, od, c, hw] {
      if (od->g.empty()) return;
      if (xd->requires_grad) {
        xd->ensure_grad();
        detail::accumulate<T>(xd->g, od->g);
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (i64 ci = 0; ci < c; ++ci) {
          T acc = T(0);
          for (i64 i = 0; i < hw; ++i) acc += od->g[ci * hw + i];
          bd->g[ci] += acc;
        }
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// reductions and reshuffles

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T x : a.values()) acc += x;
  Tensor<T> res(Shape{1}, {acc});
  Tape<T>* tp = active_tape<T>();
  if (tp && a.requires_grad()) {
    res.set_requires_grad(true);
    auto ad = a.ptr();
    auto od = res.ptr();
    tp->record([ad, od] {
      if (od->g.empty()) return;
      ad->ensure_grad();
      for (auto& g : ad->g) g += od->g[0];
    });
  }
  return res;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// sum of equally-shaped tensors, accumulated in argument order
template <class T>
Tensor<T> add_many(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("add_many: no inputs");
  const Shape& shape = parts[0].shape();
  const i64 n = parts[0].numel();
  std::vector<T> out(n, T(0));
  bool rg = false;
  for (const auto& p : parts) {
    detail::check_same_shape(shape, p.shape(), "add_many");
    auto pv = p.values();
    for (i64 i = 0; i < n; ++i) out[i] += pv[i];
    rg = rg || p.requires_grad();
  }
  Tensor<T> res(shape, std::move(out));
  Tape<T>* tp = active_tape<T>();
  if (tp && rg) {
    res.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> ps;
    ps.reserve(parts.size());
    for (const auto& p : parts) ps.push_back(p.ptr());
    auto od = res.ptr();
    tp->record([ps, od] {
      if (od->g.empty()) return;
      for (auto& pd : ps) {
        if (!pd->requires_grad) continue;
        pd->ensure_grad();
        detail::accumulate<T>(pd->g, od->g);
      }
    });
  }
  return res;
}

// row vectors [1, n_i] joined along columns
template <class T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  i64 total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != 1)
      throw std::invalid_argument("concat_cols: want [1,n] rows, got " +
                                  shape_str(p.shape()));
    total += p.shape()[1];
    rg = rg || p.requires_grad();
  }
  std::vector<T> out;
  out.reserve(total);
  for (const auto& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor<T> res({1, total}, std::move(out));

  Tape<T>* tp = active_tape<T>();
  if (tp && rg) {
    res.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> ps;
    ps.reserve(parts.size());
    for (const auto& p : parts) ps.push_back(p.ptr());
    auto od = res.ptr();
    tp->record([ps, od] {
      if (od->g.empty()) return;
      i64 off = 0;
      for (auto& pd : ps) {
        const i64 w = static_cast<i64>(pd->v.size());
        if (pd->requires_grad) {
          pd->ensure_grad();
          for (i64 i = 0; i < w; ++i) pd->g[i] += od->g[off + i];
        }
        off += w;
      }
    });
  }
  return res;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " +
                                shape_str(shape) + " changes element count");
  std::vector<T> out(a.values().begin(), a.values().end());
  Tensor<T> res(std::move(shape), std::move(out));
  Tape<T>* tp = active_tape<T>();
  if (tp && a.requires_grad()) {
    res.set_requires_grad(true);
    auto ad = a.ptr();
    auto od = res.ptr();
    tp->record([ad, od] {
      if (od->g.empty()) return;
      ad->ensure_grad();
      detail::accumulate<T>(ad->g, od->g);
    });
  }
  return res;
}

using FTensor = Tensor<float>;
using FTape = Tape<float>;

}  // namespace diffpf
