#pragma once

#include "qtkam/params.hpp"
#include "qtkam/rational.hpp"

#include <complex>
#include <vector>

namespace qtkam {

using cplx = std::complex<double>;

// Values sampled on the parameter grid. Empty means 0, a single entry is a
// constant broadcast to every grid point.
struct GridCoeff {
  std::vector<cplx> v;

  GridCoeff() = default;
  GridCoeff(cplx c) : v{c} {}
  explicit GridCoeff(std::vector<cplx> vals) : v(std::move(vals)) {}
  std::size_t size() const { return v.size(); }
  cplx at(std::size_t i) const { return v.empty() ? cplx{} : (v.size() == 1 ? v[0] : v[i]); }
  bool operator==(const GridCoeff& o) const = default;
};

// Gaussian rational re + i im.
struct ExactCoeff {
  Rational re{0}, im{0};

  ExactCoeff() = default;
  ExactCoeff(Rational r, Rational i = 0) : re(std::move(r)), im(std::move(i)) {}
  ExactCoeff(long long r) : re(r), im(0) {}
  bool operator==(const ExactCoeff& o) const { return re == o.re && im == o.im; }
};

GridCoeff operator+(const GridCoeff& a, const GridCoeff& b);
GridCoeff operator-(const GridCoeff& a, const GridCoeff& b);
GridCoeff operator*(const GridCoeff& a, const GridCoeff& b);
GridCoeff operator-(const GridCoeff& a);
bool is_zero(const GridCoeff& c);
// i * f * c for an integer factor f
GridCoeff times_i(const GridCoeff& c, std::int64_t f);
GridCoeff scale(const GridCoeff& c, const Rational& q);
GridCoeff conj(const GridCoeff& c);
double abs_max(const GridCoeff& c);

ExactCoeff operator+(const ExactCoeff& a, const ExactCoeff& b);
ExactCoeff operator-(const ExactCoeff& a, const ExactCoeff& b);
ExactCoeff operator*(const ExactCoeff& a, const ExactCoeff& b);
ExactCoeff operator-(const ExactCoeff& a);
bool is_zero(const ExactCoeff& c);
ExactCoeff times_i(const ExactCoeff& c, std::int64_t f);
ExactCoeff scale(const ExactCoeff& c, const Rational& q);
ExactCoeff conj(const ExactCoeff& c);
double abs_max(const ExactCoeff& c);

// |c|_O = max over (alive) grid points of |c| + |grad_xi c|, finite differences.
struct CoeffNormCtx {
  const Grid* grid = nullptr;
  const std::vector<char>* alive = nullptr;
};
double coeff_norm(const GridCoeff& c, const CoeffNormCtx& ctx);
double coeff_norm(const ExactCoeff& c, const CoeffNormCtx& ctx);

}  // namespace qtkam
