#include "qtkam/rational.hpp"

#include <cmath>
#include <stdexcept>

namespace qtkam {

Rational parse_rational(const std::string& raw) {
  std::string text;
  for (char ch : raw)
    if (!std::isspace(static_cast<unsigned char>(ch))) text.push_back(ch);
  if (text.empty()) throw std::invalid_argument("empty rational");
  auto slash = text.find('/');
  try {
    if (slash != std::string::npos) {
      BigInt p(text.substr(0, slash));
      BigInt q(text.substr(slash + 1));
      if (q == 0) throw std::invalid_argument("zero denominator in " + raw);
      return Rational(p, q);
    }
    auto dot = text.find('.');
    if (dot == std::string::npos && text.find_first_of("eE") == std::string::npos)
      return Rational(BigInt(text));
    if (text.find_first_of("eE") != std::string::npos)
      throw std::invalid_argument("exponent notation not supported: " + raw);
    bool neg = text[0] == '-';
    std::string body = (neg || text[0] == '+') ? text.substr(1) : text;
    dot = body.find('.');
    std::string ip = body.substr(0, dot), fp = body.substr(dot + 1);
    BigInt num(ip.empty() ? std::string("0") : ip);
    BigInt den = 1;
    for (char ch : fp) {
      if (!std::isdigit(static_cast<unsigned char>(ch))) throw std::invalid_argument(raw);
      num = num * 10 + (ch - '0');
      den *= 10;
    }
    Rational r(num, den);
    return neg ? Rational(-r) : r;
  } catch (const std::runtime_error&) {
    throw std::invalid_argument("malformed rational: " + raw);
  }
}

std::string to_string(const Rational& q) {
  if (denominator(q) == 1) return numerator(q).str();
  return numerator(q).str() + "/" + denominator(q).str();
}

double to_double(const Rational& q) { return q.convert_to<double>(); }

BigInt ipow(const BigInt& base, std::uint64_t e) {
  BigInt result = 1, b = base;
  while (e) {
    if (e & 1) result *= b;
    e >>= 1;
    if (e) b *= b;
  }
  return result;
}

Rational rpow(const Rational& base, std::int64_t e) {
  if (e >= 0) return Rational(ipow(numerator(base), e), ipow(denominator(base), e));
  if (base == 0) throw std::domain_error("0 to a negative power");
  return Rational(ipow(denominator(base), -e), ipow(numerator(base), -e));
}

namespace {
double log_bigint(const BigInt& v) {
  if (v <= 0) throw std::domain_error("log of nonpositive");
  unsigned bits = boost::multiprecision::msb(v);
  if (bits < 1000) return std::log(v.convert_to<double>());
  unsigned shift = bits - 60;
  BigInt top = v >> shift;
  return std::log(top.convert_to<double>()) + shift * std::log(2.0);
}
}  // namespace

double log_rational(const Rational& q) { return log_bigint(numerator(q)) - log_bigint(denominator(q)); }

PowTerm PowTerm::power(std::int64_t k) const { return {rpow(coef, k), exp * k, N}; }

double PowTerm::log_value() const {
  return log_rational(coef) + qtkam::to_double(exp) * std::log(static_cast<double>(N));
}

double PowTerm::to_double() const { return std::exp(log_value()); }

// x >= 0 against coef*N^(a/q): compare (x/coef)^q with N^a.
int compare(const Rational& x, const PowTerm& t) {
  if (t.coef <= 0) throw std::domain_error("PowTerm coefficient must be positive");
  if (x < 0) throw std::domain_error("compare expects a nonnegative value");
  if (x == 0) return -1;
  Rational ratio = x / t.coef;
  BigInt a = numerator(t.exp);
  BigInt q = denominator(t.exp);
  auto qq = q.convert_to<std::uint64_t>();
  Rational lhs = rpow(ratio, static_cast<std::int64_t>(qq));
  Rational rhs;
  if (a >= 0)
    rhs = Rational(ipow(BigInt(t.N), a.convert_to<std::uint64_t>()));
  else
    rhs = Rational(BigInt(1), ipow(BigInt(t.N), (-a).convert_to<std::uint64_t>()));
  if (lhs < rhs) return -1;
  if (lhs > rhs) return 1;
  return 0;
}

int compare(const PowTerm& a, const PowTerm& b) {
  if (a.N != b.N) {
    // Different bases only arise in diagnostics; fall back to logarithms.
    double la = a.log_value(), lb = b.log_value();
    return la < lb ? -1 : (la > lb ? 1 : 0);
  }
  // a.coef N^ea vs b.coef N^eb  <=>  a.coef/b.coef vs N^(eb-ea)
  return compare(a.coef / b.coef, PowTerm{Rational(1), b.exp - a.exp, a.N});
}

IntThreshold::IntThreshold(const PowTerm& t) {
  const double lim = 4.0e18;
  if (t.log_value() > std::log(lim)) {
    huge = true;
    return;
  }
  // Start from the floating estimate and walk to the exact floor.
  double est = t.to_double();
  std::int64_t f = static_cast<std::int64_t>(std::floor(est));
  if (f < 0) f = 0;
  while (f > 0 && compare(Rational(f), t) > 0) --f;
  while (compare(Rational(f + 1), t) <= 0) ++f;
  fl = f;
  ce = compare(Rational(f), t) == 0 ? f : f + 1;
}

const PowTerm& max(const PowTerm& a, const PowTerm& b) { return compare(a, b) >= 0 ? a : b; }

}  // namespace qtkam
