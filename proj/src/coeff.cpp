#include "qtkam/coeff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qtkam {

namespace {

template <class Op>
GridCoeff combine(const GridCoeff& a, const GridCoeff& b, Op op) {
  if (a.v.empty() && b.v.empty()) return {};
  if (a.v.size() > 1 && b.v.size() > 1 && a.v.size() != b.v.size())
    throw std::invalid_argument("grid coefficient size mismatch");
  std::size_t n = std::max(a.v.size(), b.v.size());
  GridCoeff out;
  out.v.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.v[i] = op(a.at(i), b.at(i));
  return out;
}

}  // namespace

GridCoeff operator+(const GridCoeff& a, const GridCoeff& b) {
  if (a.v.empty()) return b;
  if (b.v.empty()) return a;
  return combine(a, b, [](cplx x, cplx y) { return x + y; });
}

GridCoeff operator-(const GridCoeff& a, const GridCoeff& b) {
  if (b.v.empty()) return a;
  return combine(a, b, [](cplx x, cplx y) { return x - y; });
}

GridCoeff operator*(const GridCoeff& a, const GridCoeff& b) {
  if (a.v.empty() || b.v.empty()) return {};
  return combine(a, b, [](cplx x, cplx y) { return x * y; });
}

GridCoeff operator-(const GridCoeff& a) {
  GridCoeff out = a;
  for (auto& x : out.v) x = -x;
  return out;
}

bool is_zero(const GridCoeff& c) {
  return std::all_of(c.v.begin(), c.v.end(), [](cplx x) { return x == cplx{}; });
}

GridCoeff times_i(const GridCoeff& c, std::int64_t f) {
  GridCoeff out = c;
  const cplx m(0, static_cast<double>(f));
  for (auto& x : out.v) x *= m;
  return out;
}

GridCoeff scale(const GridCoeff& c, const Rational& q) {
  GridCoeff out = c;
  const double s = to_double(q);
  for (auto& x : out.v) x *= s;
  return out;
}

GridCoeff conj(const GridCoeff& c) {
  GridCoeff out = c;
  for (auto& x : out.v) x = std::conj(x);
  return out;
}

double abs_max(const GridCoeff& c) {
  double m = 0;
  for (auto x : c.v) m = std::max(m, std::abs(x));
  return m;
}

ExactCoeff operator+(const ExactCoeff& a, const ExactCoeff& b) { return {a.re + b.re, a.im + b.im}; }
ExactCoeff operator-(const ExactCoeff& a, const ExactCoeff& b) { return {a.re - b.re, a.im - b.im}; }
ExactCoeff operator*(const ExactCoeff& a, const ExactCoeff& b) {
  return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}
ExactCoeff operator-(const ExactCoeff& a) { return {-a.re, -a.im}; }
bool is_zero(const ExactCoeff& c) { return c.re == 0 && c.im == 0; }
ExactCoeff times_i(const ExactCoeff& c, std::int64_t f) { return {-c.im * f, c.re * f}; }
ExactCoeff scale(const ExactCoeff& c, const Rational& q) { return {c.re * q, c.im * q}; }
ExactCoeff conj(const ExactCoeff& c) { return {c.re, -c.im}; }
double abs_max(const ExactCoeff& c) { return std::hypot(to_double(c.re), to_double(c.im)); }

double coeff_norm(const GridCoeff& c, const CoeffNormCtx& ctx) {
  if (c.v.size() <= 1 || !ctx.grid) return abs_max(c);
  const Grid& g = *ctx.grid;
  if (c.v.size() != g.size()) throw std::invalid_argument("coefficient does not match the grid");
  auto alive = [&](long i) { return i >= 0 && (!ctx.alive || (*ctx.alive)[i]); };
  double best = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!alive(static_cast<long>(i))) continue;
    double grad2 = 0;
    for (int a = 0; a < static_cast<int>(g.shape.size()); ++a) {
      double h = g.spacing(a);
      if (h <= 0) continue;
      long lo = g.neighbour(i, a, -1), hi = g.neighbour(i, a, +1);
      cplx der;
      if (alive(lo) && alive(hi))
        der = (c.v[hi] - c.v[lo]) / (2 * h);
      else if (alive(hi))
        der = (c.v[hi] - c.v[i]) / h;
      else if (alive(lo))
        der = (c.v[i] - c.v[lo]) / h;
      grad2 += std::norm(der);
    }
    best = std::max(best, std::abs(c.v[i]) + std::sqrt(grad2));
  }
  return best;
}

double coeff_norm(const ExactCoeff& c, const CoeffNormCtx&) { return abs_max(c); }

}  // namespace qtkam
