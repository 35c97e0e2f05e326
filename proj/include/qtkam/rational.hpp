#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <string>

namespace qtkam {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

// Accepts "p/q", "p" or a decimal literal such as "0.25".
Rational parse_rational(const std::string& text);
std::string to_string(const Rational& q);
double to_double(const Rational& q);
double log_rational(const Rational& q);

BigInt ipow(const BigInt& base, std::uint64_t e);
Rational rpow(const Rational& base, std::int64_t e);

// The positive real coef * N^exp, kept symbolic so that comparisons against
// integers stay exact even when exp is not an integer.
struct PowTerm {
  Rational coef{1};
  Rational exp{0};
  std::int64_t N{1};

  PowTerm scaled(const Rational& k) const { return {coef * k, exp, N}; }
  // (coef * N^exp)^k
  PowTerm power(std::int64_t k) const;
  double to_double() const;
  double log_value() const;
};

// Sign of x - t for x >= 0.
int compare(const Rational& x, const PowTerm& t);
int compare(const PowTerm& a, const PowTerm& b);
inline bool less(const Rational& x, const PowTerm& t) { return compare(x, t) < 0; }
inline bool greater(const Rational& x, const PowTerm& t) { return compare(x, t) > 0; }
const PowTerm& max(const PowTerm& a, const PowTerm& b);

// Integer floor/ceil of a PowTerm, for fast exact comparisons of int64 values.
struct IntThreshold {
  bool huge = false;  // value exceeds every int64
  std::int64_t fl = 0, ce = 0;

  explicit IntThreshold(const PowTerm& t);
  IntThreshold() = default;
  bool lt(std::int64_t x) const { return huge || x < ce; }   // x <  t
  bool le(std::int64_t x) const { return huge || x <= fl; }  // x <= t
  bool gt(std::int64_t x) const { return !huge && x > fl; }  // x >  t
  bool ge(std::int64_t x) const { return !huge && x >= ce; } // x >= t
};

}  // namespace qtkam
