/// @file tape.hpp
/// Minimal reverse-mode tape over scalars.  The network's expanded
/// coefficients are low-degree polynomials in the weights (times powers of
/// the trainable scale), so a scalar tape is enough: field-level adjoints
/// seed the coefficient nodes and one reverse sweep yields parameter
/// gradients.
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "kinetra/errors.hpp"

namespace kinetra {

class Tape {
 public:
  // Each node keeps at most two parents with local partial derivatives.
  struct Node {
    int a = -1, b = -1;
    double da = 0.0, db = 0.0;
  };

  int size() const { return static_cast<int>(val_.size()); }
  double value(int i) const { return val_[i]; }

  int leaf(double v) { return raw(v, -1, 0.0, -1, 0.0); }
  int con(double v) { return raw(v, -1, 0.0, -1, 0.0); }

  int add(int x, int y) { return raw(val_[x] + val_[y], x, 1.0, y, 1.0); }
  int sub(int x, int y) { return raw(val_[x] - val_[y], x, 1.0, y, -1.0); }
  int mul(int x, int y) {
    return raw(val_[x] * val_[y], x, val_[y], y, val_[x]);
  }
  int div(int x, int y) {
    double iy = 1.0 / val_[y];
    return raw(val_[x] * iy, x, iy, y, -val_[x] * iy * iy);
  }
  int neg(int x) { return raw(-val_[x], x, -1.0, -1, 0.0); }
  int add_c(int x, double c) { return raw(val_[x] + c, x, 1.0, -1, 0.0); }
  int mul_c(int x, double c) { return raw(val_[x] * c, x, c, -1, 0.0); }
  int tanh_(int x) {
    double t = std::tanh(val_[x]);
    return raw(t, x, 1.0 - t * t, -1, 0.0);
  }
  int abs_(int x) {
    double s = val_[x] > 0.0 ? 1.0 : (val_[x] < 0.0 ? -1.0 : 0.0);
    return raw(std::abs(val_[x]), x, s, -1, 0.0);
  }
  int inv(int x) {
    double ix = 1.0 / val_[x];
    return raw(ix, x, -ix * ix, -1, 0.0);
  }
  // x^k for integer k of either sign, built out of taped multiplies so the
  // chain rule needs no special case.
  int pow_int(int x, int k) {
    if (k == 0) return con(1.0);
    int base = k > 0 ? x : inv(x);
    int n = k > 0 ? k : -k;
    int acc = base;
    for (int i = 1; i < n; ++i) acc = mul(acc, base);
    return acc;
  }

  // Accumulate d(sum of seeded outputs)/d(node) into the adjoint array.
  void zero_adjoints() { adj_.assign(val_.size(), 0.0); }
  void seed(int i, double w) {
    if (adj_.size() != val_.size()) adj_.resize(val_.size(), 0.0);
    adj_[i] += w;
  }
  void backward() {
    if (adj_.size() != val_.size()) adj_.resize(val_.size(), 0.0);
    for (int i = size() - 1; i >= 0; --i) {
      double a = adj_[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.a >= 0) adj_[n.a] += a * n.da;
      if (n.b >= 0) adj_[n.b] += a * n.db;
    }
  }
  double adjoint(int i) const { return adj_[i]; }

  void reset() {
    nodes_.clear();
    val_.clear();
    adj_.clear();
  }

 private:
  int raw(double v, int a, double da, int b, double db) {
    nodes_.push_back({a, b, da, db});
    val_.push_back(v);
    return static_cast<int>(val_.size()) - 1;
  }
  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::vector<double> adj_;
};

// Value-semantics handle used by code that is generic over double / taped
// scalars.
struct AD {
  Tape* t = nullptr;
  int i = -1;
  double v() const { return t->value(i); }
};

inline AD operator+(AD x, AD y) { return {x.t, x.t->add(x.i, y.i)}; }
inline AD operator-(AD x, AD y) { return {x.t, x.t->sub(x.i, y.i)}; }
inline AD operator*(AD x, AD y) { return {x.t, x.t->mul(x.i, y.i)}; }
inline AD operator/(AD x, AD y) { return {x.t, x.t->div(x.i, y.i)}; }
inline AD operator-(AD x) { return {x.t, x.t->neg(x.i)}; }
inline AD operator+(AD x, double c) { return {x.t, x.t->add_c(x.i, c)}; }
inline AD operator+(double c, AD x) { return x + c; }
inline AD operator*(AD x, double c) { return {x.t, x.t->mul_c(x.i, c)}; }
inline AD operator*(double c, AD x) { return x * c; }
inline AD operator-(AD x, double c) { return x + (-c); }
inline AD tanh(AD x) { return {x.t, x.t->tanh_(x.i)}; }
inline AD abs(AD x) { return {x.t, x.t->abs_(x.i)}; }
inline AD pow_int(AD x, int k) { return {x.t, x.t->pow_int(x.i, k)}; }
// Double counterparts so unqualified calls in scalar-generic code resolve
// to the floating-point versions (a bare abs(double) could otherwise bind
// to the integer overload from <cstdlib>).
inline double tanh(double x) { return std::tanh(x); }
inline double abs(double x) { return std::abs(x); }
// Mirrors the taped pow_int (inv + repeated multiply) so the plain and
// taped evaluation routes agree bitwise.
inline double pow_int(double x, int k) {
  if (k == 0) return 1.0;
  double base = k > 0 ? x : 1.0 / x;
  double acc = base;
  for (int i = 1, n = k > 0 ? k : -k; i < n; ++i) acc *= base;
  return acc;
}

// Ring contexts for the coefficient-expansion engine.
struct DoubleRing {
  using S = double;
  S con(double c) const { return c; }
  static double val(S x) { return x; }
};
struct TapeRing {
  Tape* t = nullptr;
  using S = AD;
  S con(double c) const { return AD{t, t->con(c)}; }
  static double val(S x) { return x.v(); }
};

}  // namespace kinetra
