#pragma once

// Reverse-mode automatic differentiation on a flat tape.
//
// The training objective has to be differentiated with respect to every
// free parameter (variational means/factors, inducing factors, level
// scalings, lengthscales, time scale).  Rather than maintaining a second,
// hand-derived gradient implementation of the covariance recursions, the
// covariance and objective code is templated on the scalar type and
// instantiated either with plain `double` (fast primal path) or with
// `ad::Var` (records a Wengert list, one reverse sweep yields all
// gradients).  Both instantiations execute the identical operation
// sequence, so the primal values agree bit for bit.
//
// `Var` distinguishes literals (no tape attached) from recorded
// variables.  Arithmetic between literals folds immediately to a new
// literal without touching the tape, so subexpressions that depend only
// on frozen parameters and data cost no tape nodes.  A phase that trains
// the variational parameters with frozen kernel hyperparameters therefore
// records a much smaller tape than a full training step, with no special
// casing in the model code.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace seqgp::ad {

class Tape {
 public:
  struct Node {
    double p1, p2;     // partial derivatives w.r.t. the parents
    int32_t a1, a2;    // parent node indices (0 = inert sink)
  };

  Tape() { clear(); }

  void clear() {
    nodes_.clear();
    nodes_.push_back(Node{0.0, 0.0, 0, 0});  // index 0: sink for literals
  }

  std::size_t size() const { return nodes_.size(); }

  int32_t push(double p1, int32_t a1, double p2, int32_t a2) {
    nodes_.push_back(Node{p1, p2, a1, a2});
    return static_cast<int32_t>(nodes_.size() - 1);
  }

  // Reverse sweep from `out`; adj[i] afterwards holds d out / d node_i.
  void gradient(int32_t out, std::vector<double>& adj) const {
    adj.assign(nodes_.size(), 0.0);
    if (out <= 0) return;
    adj[static_cast<std::size_t>(out)] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 1;) {
      const double a = adj[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      adj[static_cast<std::size_t>(n.a1)] += n.p1 * a;
      adj[static_cast<std::size_t>(n.a2)] += n.p2 * a;
    }
  }

 private:
  std::vector<Node> nodes_;
};

struct Var {
  Tape* t = nullptr;  // nullptr: literal constant
  int32_t i = 0;
  double v = 0.0;

  Var() = default;
  Var(double value) : t(nullptr), i(0), v(value) {}  // NOLINT: implicit literal
  Var(Tape* tape, int32_t idx, double value) : t(tape), i(idx), v(value) {}

  double val() const { return v; }
  bool is_literal() const { return t == nullptr; }
};

// A fresh differentiable leaf.
inline Var make_leaf(Tape& tape, double value) {
  return Var(&tape, tape.push(0.0, 0, 0.0, 0), value);
}

inline Tape* tape_of(const Var& a, const Var& b) {
  assert(!(a.t && b.t) || a.t == b.t);
  return a.t ? a.t : b.t;
}

inline Var unary(const Var& a, double value, double partial) {
  if (!a.t) return Var(value);
  return Var(a.t, a.t->push(partial, a.i, 0.0, 0), value);
}

inline Var binary(const Var& a, const Var& b, double value, double pa, double pb) {
  Tape* t = tape_of(a, b);
  if (!t) return Var(value);
  return Var(t, t->push(a.t ? pa : 0.0, a.t ? a.i : 0, b.t ? pb : 0.0, b.t ? b.i : 0), value);
}

inline Var operator+(const Var& a, const Var& b) { return binary(a, b, a.v + b.v, 1.0, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return binary(a, b, a.v - b.v, 1.0, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return binary(a, b, a.v * b.v, b.v, a.v); }
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.v;
  return binary(a, b, a.v * inv, inv, -a.v * inv * inv);
}
inline Var operator-(const Var& a) { return unary(a, -a.v, -1.0); }

inline Var& operator+=(Var& a, const Var& b) { a = a + b; return a; }
inline Var& operator-=(Var& a, const Var& b) { a = a - b; return a; }
inline Var& operator*=(Var& a, const Var& b) { a = a * b; return a; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.v);
  return unary(a, e, e);
}
inline Var log(const Var& a) { return unary(a, std::log(a.v), 1.0 / a.v); }
inline Var sqrt(const Var& a) {
  const double r = std::sqrt(a.v);
  return unary(a, r, 0.5 / r);
}

// log(1 + exp(x)) and its inverse, evaluated without overflow.  Used as the
// smooth bijection between unconstrained optimizer space and positive
// hyperparameters.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::domain_error("softplus_inverse: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}
inline Var softplus(const Var& a) {
  const double s = 1.0 / (1.0 + std::exp(-a.v));  // d softplus / dx
  return unary(a, softplus(a.v), s);
}

// Scalar-generic helpers so templated code reads uniformly for double/Var.
inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.v; }

}  // namespace seqgp::ad
