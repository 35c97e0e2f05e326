#pragma once

#include "qtkam/coeff.hpp"
#include "qtkam/lattice.hpp"
#include "qtkam/params.hpp"

#include <functional>
#include <limits>
#include <map>
#include <vector>

namespace qtkam {

// Sparse exponent vector over normal sites, sorted by site in sign-lex order.
using SiteExp = std::pair<IntVec, int>;
using MultiIndex = std::vector<SiteExp>;

int mi_total(const MultiIndex& a);
int mi_exp(const MultiIndex& a, const IntVec& site);
MultiIndex mi_add(const MultiIndex& a, const MultiIndex& b);
// Adds delta to the exponent of site; throws if it would go negative.
MultiIndex mi_shift(const MultiIndex& a, const IntVec& site, int delta);
MultiIndex mi_normalize(std::vector<SiteExp> entries);
int mi_compare(const MultiIndex& a, const MultiIndex& b);

struct Monomial {
  IntVec k;  // Fourier index, length b
  IntVec l;  // action exponents, length b
  MultiIndex alpha, beta;

  int degree() const { return 2 * static_cast<int>(lsum()) + mi_total(alpha) + mi_total(beta); }
  std::int64_t lsum() const;
  std::int64_t kabs() const;
  bool operator<(const Monomial& o) const;
  bool operator==(const Monomial& o) const;
  std::string str() const;
};

// I^l e^{i k.theta} z^alpha zbar^beta with k = l = 0 of length b.
Monomial make_monomial(int b, IntVec k = {}, IntVec l = {}, MultiIndex alpha = {}, MultiIndex beta = {});
Monomial conjugate(const Monomial& m);  // (k,l,a,b) -> (-k,l,b,a)

IntVec momentum(const IntVec& k, const MultiIndex& alpha, const MultiIndex& beta, const Problem& problem);
inline IntVec momentum(const Monomial& m, const Problem& problem) {
  return momentum(m.k, m.alpha, m.beta, problem);
}
IntVec pi_k(const IntVec& k, const Problem& problem);

struct Trunc {
  int degree_max = std::numeric_limits<int>::max();
  std::int64_t K_max = std::numeric_limits<std::int64_t>::max();
  bool admits(const Monomial& m) const { return m.degree() <= degree_max && m.kabs() <= K_max; }
};

template <class C>
struct Series {
  int b = 1;
  std::map<Monomial, C> terms;
  bool momentum_flag = true;
  Trunc trunc;
  double dropped = 0;  // sum of |coefficient| products lost to truncation

  Series() = default;
  explicit Series(int b_) : b(b_) {}

  void add(const Monomial& m, const C& c) {
    if (is_zero(c)) return;
    auto it = terms.find(m);
    if (it == terms.end()) {
      terms.emplace(m, c);
      return;
    }
    it->second = it->second + c;
    if (is_zero(it->second)) terms.erase(it);
  }
  const C* find(const Monomial& m) const {
    auto it = terms.find(m);
    return it == terms.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return terms.size(); }
  bool empty() const { return terms.empty(); }
  bool operator==(const Series& o) const { return b == o.b && terms == o.terms; }
};

using GSeries = Series<GridCoeff>;
using XSeries = Series<ExactCoeff>;

template <class C> Series<C> operator+(const Series<C>& a, const Series<C>& c);
template <class C> Series<C> operator-(const Series<C>& a, const Series<C>& c);
template <class C> Series<C> scaled(const Series<C>& a, const Rational& q);
template <class C> Series<C> scaled(const Series<C>& a, const C& q);
template <class C> Series<C> product(const Series<C>& F, const Series<C>& G, const Trunc& trunc = {});

enum class SiteClass { low, high, rest };
using SiteClassifier = std::function<SiteClass(const IntVec&)>;

enum BracketPart : unsigned { part_Itheta = 1, part_L = 2, part_H = 4, part_R = 8, part_all = 15 };

// {F,G} = sum_j (F_I G_theta - F_theta G_I) + i sum_n (F_zbar G_z - F_z G_zbar), so that
// {N, e^{ik.theta} z_m zbar_n} = i(<k,omega> + Omega_m - Omega_n) e^{ik.theta} z_m zbar_n.
template <class C> Series<C> poisson_bracket(const Series<C>& F, const Series<C>& G, const Trunc& trunc = {});
// Only derivative terms of the selected variable classes.
template <class C>
Series<C> split_bracket(const Series<C>& F, const Series<C>& G, const Trunc& trunc, unsigned parts,
                        const SiteClassifier& cls);

using MonoPred = std::function<bool(const Monomial&)>;
template <class C> Series<C> project(const Series<C>& F, const MonoPred& pred);
MonoPred pred_le_K(std::int64_t K);
MonoPred pred_high_freq(std::int64_t N);  // |k| >= N
MonoPred pred_low_momentum(std::int64_t N, const Rational& mu);  // |k| < N, sum |j|(a_j+b_j) < mu N^3
bool low_momentum_sum_below(const Monomial& m, const Rational& bound);

template <class C> struct LieResult {
  Series<C> result;
  Series<C> last;  // ad_F^order H / order!
};
// sum_{j<=order} ad_F^j H / j!
template <class C>
LieResult<C> lie_transform(const Series<C>& F, const Series<C>& H, int order, const Trunc& trunc = {});

struct NormCtx {
  double r = 0.1, s = 0.5, rho = 0.1;
  int d = 1;
  CoeffNormCtx coeff;
  NormCtx with(double r_, double s_) const {
    NormCtx o = *this;
    o.r = r_;
    o.s = s_;
    return o;
  }
};

double site_log_weight(const IntVec& n, double rho, int d);  // log(e^{rho|n|}|n|^{d+1})
double log_sup_monomial(const MultiIndex& g, const NormCtx& ctx);
template <class C> double majorant_norm(const Series<C>& F, const NormCtx& ctx);
template <class C> double vector_field_norm(const Series<C>& F, const NormCtx& ctx);

struct CauchyReport {
  double lhs = 0, rhs = 0, delta = 0, constant = 0;
  bool holds() const { return lhs <= rhs * (1 + 1e-12); }
};
template <class C>
CauchyReport cauchy_check(const Series<C>& F, const Series<C>& G, double r, double s, double r2, double s2,
                          const NormCtx& ctx);

template <class C> bool momentum_conserving(const Series<C>& F, const Problem& problem);
template <class C> bool is_real(const Series<C>& F, double tol = 1e-12);
template <class C> double max_abs_coeff(const Series<C>& F);

GSeries to_grid(const XSeries& F);

}  // namespace qtkam
