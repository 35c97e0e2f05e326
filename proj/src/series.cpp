#include "qtkam/series.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qtkam {

int mi_total(const MultiIndex& a) {
  int s = 0;
  for (const auto& e : a) s += e.second;
  return s;
}

int mi_exp(const MultiIndex& a, const IntVec& site) {
  auto it = std::lower_bound(a.begin(), a.end(), site,
                             [](const SiteExp& e, const IntVec& s) { return signlex_less(e.first, s); });
  return (it != a.end() && it->first == site) ? it->second : 0;
}

MultiIndex mi_add(const MultiIndex& a, const MultiIndex& b) {
  MultiIndex out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && signlex_less(a[i].first, b[j].first))) {
      out.push_back(a[i++]);
    } else if (i == a.size() || signlex_less(b[j].first, a[i].first)) {
      out.push_back(b[j++]);
    } else {
      out.push_back({a[i].first, a[i].second + b[j].second});
      ++i;
      ++j;
    }
  }
  return out;
}

MultiIndex mi_shift(const MultiIndex& a, const IntVec& site, int delta) {
  MultiIndex out = a;
  auto it = std::lower_bound(out.begin(), out.end(), site,
                             [](const SiteExp& e, const IntVec& s) { return signlex_less(e.first, s); });
  if (it != out.end() && it->first == site) {
    it->second += delta;
    if (it->second < 0) throw std::invalid_argument("negative exponent");
    if (it->second == 0) out.erase(it);
  } else {
    if (delta < 0) throw std::invalid_argument("negative exponent");
    if (delta > 0) out.insert(it, {site, delta});
  }
  return out;
}

MultiIndex mi_normalize(std::vector<SiteExp> entries) {
  MultiIndex out;
  for (auto& e : entries) {
    if (e.second < 0) throw std::invalid_argument("negative exponent");
    out = mi_shift(out, e.first, e.second);
  }
  return out;
}

int mi_compare(const MultiIndex& a, const MultiIndex& b) {
  if (a.size() != b.size()) return a.size() < b.size() ? -1 : 1;
  for (std::size_t i = 0; i < a.size(); ++i) {
    int c = signlex_compare(a[i].first, b[i].first);
    if (c) return c;
    if (a[i].second != b[i].second) return a[i].second < b[i].second ? -1 : 1;
  }
  return 0;
}

std::int64_t Monomial::lsum() const {
  std::int64_t s = 0;
  for (auto x : l) s += x;
  return s;
}

std::int64_t Monomial::kabs() const {
  std::int64_t s = 0;
  for (auto x : k) s += x < 0 ? -x : x;
  return s;
}

bool Monomial::operator<(const Monomial& o) const {
  if (int c = signlex_compare(k, o.k)) return c < 0;
  if (int c = signlex_compare(l, o.l)) return c < 0;
  if (int c = mi_compare(alpha, o.alpha)) return c < 0;
  return mi_compare(beta, o.beta) < 0;
}

bool Monomial::operator==(const Monomial& o) const {
  return k == o.k && l == o.l && alpha == o.alpha && beta == o.beta;
}

std::string Monomial::str() const {
  std::string s = "k" + format_vec(k) + " l" + format_vec(l) + " a{";
  for (const auto& e : alpha) s += format_vec(e.first) + "^" + std::to_string(e.second);
  s += "} b{";
  for (const auto& e : beta) s += format_vec(e.first) + "^" + std::to_string(e.second);
  return s + "}";
}

Monomial make_monomial(int b, IntVec k, IntVec l, MultiIndex alpha, MultiIndex beta) {
  Monomial m;
  m.k = k.empty() ? IntVec(b, 0) : std::move(k);
  m.l = l.empty() ? IntVec(b, 0) : std::move(l);
  if (static_cast<int>(m.k.size()) != b || static_cast<int>(m.l.size()) != b)
    throw std::invalid_argument("monomial k/l length must equal b");
  for (auto x : m.l)
    if (x < 0) throw std::invalid_argument("negative action exponent");
  m.alpha = std::move(alpha);
  m.beta = std::move(beta);
  return m;
}

Monomial conjugate(const Monomial& m) {
  Monomial c = m;
  for (auto& x : c.k) x = -x;
  std::swap(c.alpha, c.beta);
  return c;
}

IntVec pi_k(const IntVec& k, const Problem& problem) {
  IntVec out(problem.d, 0);
  for (int i = 0; i < problem.b; ++i)
    for (int j = 0; j < problem.d; ++j) out[j] += problem.sites[i][j] * k[i];
  return out;
}

IntVec momentum(const IntVec& k, const MultiIndex& alpha, const MultiIndex& beta, const Problem& problem) {
  IntVec out = pi_k(k, problem);
  for (const auto& [m, e] : alpha)
    for (int j = 0; j < problem.d; ++j) out[j] += m[j] * e;
  for (const auto& [m, e] : beta)
    for (int j = 0; j < problem.d; ++j) out[j] -= m[j] * e;
  return out;
}

template <class C>
Series<C> operator+(const Series<C>& a, const Series<C>& c) {
  Series<C> out = a;
  for (const auto& [m, v] : c.terms) out.add(m, v);
  out.momentum_flag = a.momentum_flag && c.momentum_flag;
  out.dropped = a.dropped + c.dropped;
  return out;
}

template <class C>
Series<C> operator-(const Series<C>& a, const Series<C>& c) {
  Series<C> out = a;
  for (const auto& [m, v] : c.terms) out.add(m, -v);
  out.momentum_flag = a.momentum_flag && c.momentum_flag;
  out.dropped = a.dropped + c.dropped;
  return out;
}

template <class C>
Series<C> scaled(const Series<C>& a, const Rational& q) {
  Series<C> out(a.b);
  out.momentum_flag = a.momentum_flag;
  out.trunc = a.trunc;
  for (const auto& [m, v] : a.terms) out.add(m, scale(v, q));
  return out;
}

template <class C>
Series<C> scaled(const Series<C>& a, const C& q) {
  Series<C> out(a.b);
  out.momentum_flag = a.momentum_flag;
  out.trunc = a.trunc;
  for (const auto& [m, v] : a.terms) out.add(m, v * q);
  return out;
}

namespace {

IntVec vadd(const IntVec& a, const IntVec& b) {
  IntVec o = a;
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += b[i];
  return o;
}

template <class C>
void emit(Series<C>& out, const Trunc& trunc, Monomial&& m, const C& cF, const C& cG, std::int64_t factor) {
  if (!trunc.admits(m)) {
    out.dropped += abs_max(cF) * abs_max(cG) * static_cast<double>(factor < 0 ? -factor : factor);
    return;
  }
  out.add(m, times_i(cF * cG, factor));
}

template <class C>
void bracket_pair(Series<C>& out, const Trunc& trunc, const Monomial& f, const C& cF, const Monomial& g,
                  const C& cG, unsigned parts, const SiteClassifier* cls) {
  const int b = static_cast<int>(f.k.size());
  if (parts & part_Itheta) {
    for (int j = 0; j < b; ++j) {
      std::int64_t fac = f.l[j] * g.k[j] - f.k[j] * g.l[j];
      if (fac == 0) continue;
      Monomial m;
      m.k = vadd(f.k, g.k);
      m.l = vadd(f.l, g.l);
      m.l[j] -= 1;
      m.alpha = mi_add(f.alpha, g.alpha);
      m.beta = mi_add(f.beta, g.beta);
      emit(out, trunc, std::move(m), cF, cG, fac);
    }
  }
  if (!(parts & (part_L | part_H | part_R))) return;
  auto visit = [&](const IntVec& site) {
    std::int64_t fac = static_cast<std::int64_t>(mi_exp(f.beta, site)) * mi_exp(g.alpha, site) -
                       static_cast<std::int64_t>(mi_exp(f.alpha, site)) * mi_exp(g.beta, site);
    if (fac == 0) return;
    if (parts != part_all) {
      SiteClass c = cls ? (*cls)(site) : SiteClass::rest;
      unsigned bit = c == SiteClass::low ? part_L : (c == SiteClass::high ? part_H : part_R);
      if (!(parts & bit)) return;
    }
    Monomial m;
    m.k = vadd(f.k, g.k);
    m.l = vadd(f.l, g.l);
    m.alpha = mi_shift(mi_add(f.alpha, g.alpha), site, -1);
    m.beta = mi_shift(mi_add(f.beta, g.beta), site, -1);
    emit(out, trunc, std::move(m), cF, cG, fac);
  };
  // Sites shared between F and G; each visited once.
  MultiIndex fs = mi_add(f.alpha, f.beta);
  for (const auto& e : fs) {
    if (mi_exp(g.alpha, e.first) || mi_exp(g.beta, e.first)) visit(e.first);
  }
}

template <class C>
Series<C> bracket_impl(const Series<C>& F, const Series<C>& G, const Trunc& trunc, unsigned parts,
                       const SiteClassifier* cls) {
  if (F.b != G.b) throw std::invalid_argument("bracket of series with different b");
  Series<C> out(F.b);
  out.trunc = trunc;
  out.momentum_flag = F.momentum_flag && G.momentum_flag;
  for (const auto& [f, cF] : F.terms)
    for (const auto& [g, cG] : G.terms) bracket_pair(out, trunc, f, cF, g, cG, parts, cls);
  return out;
}

}  // namespace

template <class C>
Series<C> product(const Series<C>& F, const Series<C>& G, const Trunc& trunc) {
  Series<C> out(F.b);
  out.trunc = trunc;
  out.momentum_flag = F.momentum_flag && G.momentum_flag;
  for (const auto& [f, cF] : F.terms)
    for (const auto& [g, cG] : G.terms) {
      Monomial m;
      m.k = vadd(f.k, g.k);
      m.l = vadd(f.l, g.l);
      m.alpha = mi_add(f.alpha, g.alpha);
      m.beta = mi_add(f.beta, g.beta);
      if (!trunc.admits(m)) {
        out.dropped += abs_max(cF) * abs_max(cG);
        continue;
      }
      out.add(m, cF * cG);
    }
  return out;
}

template <class C>
Series<C> poisson_bracket(const Series<C>& F, const Series<C>& G, const Trunc& trunc) {
  return bracket_impl(F, G, trunc, part_all, nullptr);
}

template <class C>
Series<C> split_bracket(const Series<C>& F, const Series<C>& G, const Trunc& trunc, unsigned parts,
                        const SiteClassifier& cls) {
  return bracket_impl(F, G, trunc, parts, &cls);
}

template <class C>
Series<C> project(const Series<C>& F, const MonoPred& pred) {
  Series<C> out(F.b);
  out.trunc = F.trunc;
  out.momentum_flag = F.momentum_flag;
  for (const auto& [m, c] : F.terms)
    if (pred(m)) out.terms.emplace(m, c);
  return out;
}

MonoPred pred_le_K(std::int64_t K) {
  return [K](const Monomial& m) { return m.kabs() <= K; };
}

MonoPred pred_high_freq(std::int64_t N) {
  return [N](const Monomial& m) { return m.kabs() >= N; };
}

bool low_momentum_sum_below(const Monomial& m, const Rational& bound) {
  long double s = 0;
  for (const auto* mi : {&m.alpha, &m.beta})
    for (const auto& [site, e] : *mi) s += e * std::sqrt(static_cast<long double>(norm2(site)));
  long double bd = static_cast<long double>(to_double(bound));
  if (std::abs(s - bd) > 1e-9L * std::max<long double>(1, bd)) return s < bd;
  // Close call: redo the irrational sum with 100 digits.
  using big = boost::multiprecision::cpp_bin_float_100;
  big acc = 0;
  for (const auto* mi : {&m.alpha, &m.beta})
    for (const auto& [site, e] : *mi) acc += big(e) * boost::multiprecision::sqrt(big(norm2(site)));
  big bb = big(numerator(bound).str()) / big(denominator(bound).str());
  return acc < bb;
}

MonoPred pred_low_momentum(std::int64_t N, const Rational& mu) {
  Rational bound = mu * Rational(N) * N * N;
  return [N, bound](const Monomial& m) { return m.kabs() < N && low_momentum_sum_below(m, bound); };
}

template <class C>
LieResult<C> lie_transform(const Series<C>& F, const Series<C>& H, int order, const Trunc& trunc) {
  if (order < 0) throw std::invalid_argument("lie_transform order must be >= 0");
  LieResult<C> out;
  out.result = H;
  out.result.trunc = trunc;
  Series<C> term = H;
  out.last = H;
  for (int j = 1; j <= order; ++j) {
    Series<C> next = poisson_bracket(F, term, trunc);
    double dropped = next.dropped;
    term = scaled(next, Rational(1, j));
    term.dropped = dropped;
    out.result = out.result + term;
    out.last = term;
  }
  return out;
}

double site_log_weight(const IntVec& n, double rho, int d) {
  double len = std::sqrt(static_cast<double>(norm2(n)));
  if (len == 0) throw std::invalid_argument("weight of the zero site");
  return rho * len + (d + 1) * std::log(len);
}

// log sup |z^g| on sum w_n |z_n| <= r: (r/|g|)^{|g|} prod (g_n/w_n)^{g_n}
double log_sup_monomial(const MultiIndex& g, const NormCtx& ctx) {
  int tot = mi_total(g);
  if (tot == 0) return 0;
  double v = tot * std::log(ctx.r / tot);
  for (const auto& [site, e] : g) v += e * (std::log(static_cast<double>(e)) - site_log_weight(site, ctx.rho, ctx.d));
  return v;
}

namespace {

double log_weight(const IntVec& k, std::int64_t lsum, const MultiIndex& a, const MultiIndex& b, const NormCtx& ctx) {
  std::int64_t ka = 0;
  for (auto x : k) ka += x < 0 ? -x : x;
  return 2.0 * lsum * std::log(ctx.r) + ka * ctx.s + log_sup_monomial(a, ctx) + log_sup_monomial(b, ctx);
}

}  // namespace

template <class C>
double majorant_norm(const Series<C>& F, const NormCtx& ctx) {
  if (ctx.r <= 0 || ctx.s < 0) throw std::invalid_argument("norm needs r > 0, s >= 0");
  double total = 0;
  for (const auto& [m, c] : F.terms)
    total += coeff_norm(c, ctx.coeff) * std::exp(log_weight(m.k, m.lsum(), m.alpha, m.beta, ctx));
  return total;
}

template <class C>
double vector_field_norm(const Series<C>& F, const NormCtx& ctx) {
  if (ctx.r <= 0 || ctx.s < 0) throw std::invalid_argument("norm needs r > 0, s >= 0");
  double total = 0;
  const double lr = std::log(ctx.r);
  for (const auto& [m, c] : F.terms) {
    const double cn = coeff_norm(c, ctx.coeff);
    if (cn == 0) continue;
    const auto L = m.lsum();
    for (std::size_t j = 0; j < m.l.size(); ++j) {
      if (m.l[j] > 0) total += cn * m.l[j] * std::exp(log_weight(m.k, L - 1, m.alpha, m.beta, ctx));
      if (m.k[j] != 0)
        total += cn * std::abs(static_cast<double>(m.k[j])) *
                 std::exp(log_weight(m.k, L, m.alpha, m.beta, ctx) - 2 * lr);
    }
    for (const auto& [site, e] : m.alpha)
      total += cn * e *
               std::exp(site_log_weight(site, ctx.rho, ctx.d) - lr +
                        log_weight(m.k, L, mi_shift(m.alpha, site, -1), m.beta, ctx));
    for (const auto& [site, e] : m.beta)
      total += cn * e *
               std::exp(site_log_weight(site, ctx.rho, ctx.d) - lr +
                        log_weight(m.k, L, m.alpha, mi_shift(m.beta, site, -1), ctx));
  }
  return total;
}

template <class C>
CauchyReport cauchy_check(const Series<C>& F, const Series<C>& G, double r, double s, double r2, double s2,
                          const NormCtx& ctx) {
  if (!(0 < r2 && r2 < r && 0 < s2 && s2 < s)) throw std::invalid_argument("cauchy_check needs r' < r, s' < s");
  CauchyReport rep;
  rep.delta = (r2 / r) * (r2 / r) * std::min(s - s2, 1 - r2 / r);
  rep.constant = std::pow(2.0, 2 * ctx.d + 1);
  auto br = poisson_bracket(F, G);
  rep.lhs = vector_field_norm(br, ctx.with(r2, s2));
  rep.rhs = rep.constant / rep.delta * vector_field_norm(F, ctx.with(r, s)) * vector_field_norm(G, ctx.with(r, s));
  return rep;
}

template <class C>
bool momentum_conserving(const Series<C>& F, const Problem& problem) {
  for (const auto& [m, c] : F.terms) {
    auto p = momentum(m, problem);
    if (std::any_of(p.begin(), p.end(), [](auto x) { return x != 0; })) return false;
  }
  return true;
}

namespace {
double coeff_gap(const GridCoeff& a, const GridCoeff& b) { return abs_max(a - b); }
double coeff_gap(const ExactCoeff& a, const ExactCoeff& b) { return is_zero(a - b) ? 0.0 : abs_max(a - b); }
}  // namespace

template <class C>
bool is_real(const Series<C>& F, double tol) {
  for (const auto& [m, c] : F.terms) {
    auto cm = conjugate(m);
    const C* other = F.find(cm);
    C target = other ? *other : C{};
    if (coeff_gap(conj(c), target) > tol) return false;
  }
  return true;
}

template <class C>
double max_abs_coeff(const Series<C>& F) {
  double m = 0;
  for (const auto& [mono, c] : F.terms) m = std::max(m, abs_max(c));
  return m;
}

GSeries to_grid(const XSeries& F) {
  GSeries out(F.b);
  out.momentum_flag = F.momentum_flag;
  out.trunc = F.trunc;
  for (const auto& [m, c] : F.terms) out.add(m, GridCoeff(cplx(to_double(c.re), to_double(c.im))));
  return out;
}

#define QTKAM_INSTANTIATE(C)                                                                                   \
  template Series<C> operator+(const Series<C>&, const Series<C>&);                                           \
  template Series<C> operator-(const Series<C>&, const Series<C>&);                                           \
  template Series<C> scaled(const Series<C>&, const Rational&);                                               \
  template Series<C> scaled(const Series<C>&, const C&);                                                      \
  template Series<C> product(const Series<C>&, const Series<C>&, const Trunc&);                               \
  template Series<C> poisson_bracket(const Series<C>&, const Series<C>&, const Trunc&);                       \
  template Series<C> split_bracket(const Series<C>&, const Series<C>&, const Trunc&, unsigned,                \
                                   const SiteClassifier&);                                                    \
  template Series<C> project(const Series<C>&, const MonoPred&);                                              \
  template LieResult<C> lie_transform(const Series<C>&, const Series<C>&, int, const Trunc&);                 \
  template double majorant_norm(const Series<C>&, const NormCtx&);                                            \
  template double vector_field_norm(const Series<C>&, const NormCtx&);                                        \
  template CauchyReport cauchy_check(const Series<C>&, const Series<C>&, double, double, double, double,      \
                                     const NormCtx&);                                                         \
  template bool momentum_conserving(const Series<C>&, const Problem&);                                        \
  template bool is_real(const Series<C>&, double);                                                            \
  template double max_abs_coeff(const Series<C>&);

QTKAM_INSTANTIATE(GridCoeff)
QTKAM_INSTANTIATE(ExactCoeff)

}  // namespace qtkam
