#pragma once

#include "smoothrl/common.hpp"

#include <cassert>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace smoothrl {

enum class OpKind : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  div,
  neg,
  tanh_op,
  exp_op,
  log_op,
  square,
  sqrt_op,
  affine,  // fused dot product + bias against constant coefficients
  dot,     // fused inner product of two differentiable spans
  sum,
};

class Tape;

/// Handle to a scalar node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t idx = 0;
};

/// Append-only record of a scalar computation. Each node stores its operation
/// kind, the indices of its parents and the local partial derivative with
/// respect to each parent; partials are evaluated eagerly during construction,
/// so a backward sweep is a single reverse pass with no op dispatch.
class Tape {
 public:
  Var leaf(double v) { return emit(OpKind::leaf, v, {}, {}); }

  std::vector<Var> leaves(const Vec& v) {
    std::vector<Var> out(static_cast<size_t>(v.size()));
    for (int i = 0; i < v.size(); ++i) out[static_cast<size_t>(i)] = leaf(v[i]);
    return out;
  }

  double value(Var v) const { return val_[v.idx]; }

  std::size_t size() const { return meta_.size(); }

  OpKind op_kind(std::uint32_t i) const { return meta_[i].op; }

  std::span<const std::uint32_t> parents_of(std::uint32_t i) const {
    return {parent_.data() + meta_[i].args_begin, meta_[i].args_count};
  }

  /// Reverse sweep from `root`: visits every node at most once, in reverse
  /// construction order, accumulating adjoints into the parents.
  void backward(Var root) {
    assert(root.tape == this);
    adj_.assign(root.idx + 1, 0.0);
    adj_[root.idx] = 1.0;
    for (std::uint32_t i = root.idx + 1; i-- > 0;) {
      const double a = adj_[i];
      if (a == 0.0) continue;
      const NodeMeta& m = meta_[i];
      for (std::uint32_t k = 0; k < m.args_count; ++k) {
        adj_[parent_[m.args_begin + k]] += a * partial_[m.args_begin + k];
      }
    }
  }

  /// Adjoint of `v` after the most recent backward() call.
  double adjoint(Var v) const {
    return v.idx < adj_.size() ? adj_[v.idx] : 0.0;
  }

  Vec gradient(Var root, std::span<const Var> wrt) {
    backward(root);
    Vec g(static_cast<Eigen::Index>(wrt.size()));
    for (size_t i = 0; i < wrt.size(); ++i) g[static_cast<Eigen::Index>(i)] = adjoint(wrt[i]);
    return g;
  }

  /// Variant taking a list of output nodes; gradients are defined for a single
  /// scalar loss only.
  Vec gradient(std::span<const Var> outputs, std::span<const Var> wrt) {
    if (outputs.size() != 1) {
      throw std::invalid_argument("gradient requires a single scalar loss node");
    }
    return gradient(outputs[0], wrt);
  }

  void clear() {
    val_.clear();
    meta_.clear();
    parent_.clear();
    partial_.clear();
    adj_.clear();
  }

  // --- node constructors used by the operator overloads and fused helpers ---

  Var emit1(OpKind op, double v, Var a, double pa) {
    const std::uint32_t args[] = {a.idx};
    const double ps[] = {pa};
    return emit(op, v, args, ps);
  }

  Var emit2(OpKind op, double v, Var a, double pa, Var b, double pb) {
    const std::uint32_t args[] = {a.idx, b.idx};
    const double ps[] = {pa, pb};
    return emit(op, v, args, ps);
  }

  Var emit(OpKind op, double v, std::span<const std::uint32_t> args, std::span<const double> partials) {
    assert(args.size() == partials.size());
    NodeMeta m;
    m.op = op;
    m.args_begin = static_cast<std::uint32_t>(parent_.size());
    m.args_count = static_cast<std::uint32_t>(args.size());
    for (size_t k = 0; k < args.size(); ++k) {
      assert(args[k] < meta_.size() && "parents must precede the node");
      parent_.push_back(args[k]);
      partial_.push_back(partials[k]);
    }
    meta_.push_back(m);
    val_.push_back(v);
    Var out;
    out.tape = this;
    out.idx = static_cast<std::uint32_t>(meta_.size() - 1);
    return out;
  }

 private:
  struct NodeMeta {
    OpKind op;
    std::uint32_t args_begin;
    std::uint32_t args_count;
  };

  std::vector<double> val_;
  std::vector<NodeMeta> meta_;
  std::vector<std::uint32_t> parent_;
  std::vector<double> partial_;
  std::vector<double> adj_;
};

// --- scalar operators -------------------------------------------------------

inline double value(Var v) { return v.tape->value(v); }

inline Var operator+(Var a, Var b) {
  return a.tape->emit2(OpKind::add, value(a) + value(b), a, 1.0, b, 1.0);
}

inline Var operator-(Var a, Var b) {
  return a.tape->emit2(OpKind::sub, value(a) - value(b), a, 1.0, b, -1.0);
}

inline Var operator*(Var a, Var b) {
  return a.tape->emit2(OpKind::mul, value(a) * value(b), a, value(b), b, value(a));
}

inline Var operator/(Var a, Var b) {
  const double vb = value(b);
  return a.tape->emit2(OpKind::div, value(a) / vb, a, 1.0 / vb, b, -value(a) / (vb * vb));
}

inline Var operator-(Var a) { return a.tape->emit1(OpKind::neg, -value(a), a, -1.0); }

inline Var operator+(Var a, double c) { return a.tape->emit1(OpKind::add, value(a) + c, a, 1.0); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return a.tape->emit1(OpKind::sub, c - value(a), a, -1.0); }
inline Var operator*(Var a, double c) { return a.tape->emit1(OpKind::mul, value(a) * c, a, c); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, Var a) {
  const double va = value(a);
  return a.tape->emit1(OpKind::div, c / va, a, -c / (va * va));
}

inline Var tanh(Var a) {
  const double t = std::tanh(value(a));
  return a.tape->emit1(OpKind::tanh_op, t, a, 1.0 - t * t);
}

inline Var exp(Var a) {
  const double e = std::exp(value(a));
  return a.tape->emit1(OpKind::exp_op, e, a, e);
}

inline Var log(Var a) {
  return a.tape->emit1(OpKind::log_op, std::log(value(a)), a, 1.0 / value(a));
}

inline Var square(Var a) {
  return a.tape->emit1(OpKind::square, value(a) * value(a), a, 2.0 * value(a));
}

inline Var sqrt(Var a) {
  const double s = std::sqrt(value(a));
  return a.tape->emit1(OpKind::sqrt_op, s, a, 0.5 / s);
}

// --- fused vector helpers (single node, exact partials) ---------------------

/// y = sum_k w[k] * x[k] + bias, with constant coefficients w and bias.
inline Var affine_const(Tape& t, std::span<const double> w, std::span<const Var> x, double bias) {
  assert(w.size() == x.size());
  double v = bias;
  std::vector<std::uint32_t> args(x.size());
  std::vector<double> ps(x.size());
  for (size_t k = 0; k < x.size(); ++k) {
    v += w[k] * value(x[k]);
    args[k] = x[k].idx;
    ps[k] = w[k];
  }
  return t.emit(OpKind::affine, v, args, ps);
}

/// y = sum_k a[k] * b[k], both spans differentiable.
inline Var dot(Tape& t, std::span<const Var> a, std::span<const Var> b) {
  assert(a.size() == b.size());
  double v = 0.0;
  std::vector<std::uint32_t> args(2 * a.size());
  std::vector<double> ps(2 * a.size());
  for (size_t k = 0; k < a.size(); ++k) {
    v += value(a[k]) * value(b[k]);
    args[k] = a[k].idx;
    ps[k] = value(b[k]);
    args[a.size() + k] = b[k].idx;
    ps[a.size() + k] = value(a[k]);
  }
  return t.emit(OpKind::dot, v, args, ps);
}

inline Var sum(Tape& t, std::span<const Var> xs) {
  double v = 0.0;
  std::vector<std::uint32_t> args(xs.size());
  std::vector<double> ps(xs.size(), 1.0);
  for (size_t k = 0; k < xs.size(); ++k) {
    v += value(xs[k]);
    args[k] = xs[k].idx;
  }
  return t.emit(OpKind::sum, v, args, ps);
}

// --- finite-difference checking ---------------------------------------------

/// A scalar expression built from leaves registered on the given tape.
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;

inline double eval_tape_fn(const TapeFn& f, const Vec& x) {
  Tape t;
  const std::vector<Var> xs = t.leaves(x);
  return value(f(t, xs));
}

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
inline double finite_diff_check(const TapeFn& f, const Vec& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  Tape t;
  const std::vector<Var> xs = t.leaves(x);
  const Var loss = f(t, xs);
  const Vec analytic = t.gradient(loss, xs);

  double worst = 0.0;
  Vec xp = x;
  for (int i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + step;
    const double fp = eval_tape_fn(f, xp);
    xp[i] = x[i] - step;
    const double fm = eval_tape_fn(f, xp);
    xp[i] = x[i];
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

/// Central-difference gradient of a plain scalar function; shared by tests
/// that check the fused gradient paths.
inline Vec numeric_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double step) {
  Vec g(x.size());
  Vec xp = x;
  for (int i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + step;
    const double fp = f(xp);
    xp[i] = x[i] - step;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline double max_rel_error(const Vec& analytic, const Vec& numeric) {
  double worst = 0.0;
  for (int i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (std::abs(analytic[i]) + 1e-8));
  }
  return worst;
}

}  // namespace smoothrl
