#include "qtkam/toeplitz.hpp"

#include <cmath>
#include <sstream>

namespace qtkam {

void require_separated(std::int64_t N, const LatticeParams& lp) {
  // 4N^3 < N^tau1 / 2  <=>  8 N^3 < N^tau1
  if (compare(Rational(8 * N * N * N), PowTerm{Rational(1), lp.tau1, N}) >= 0)
    throw ValidationError("low and high variables overlap at N=" + std::to_string(N) + " (need 8N^3 < N^tau1)");
}

SiteClassifier make_site_classifier(std::int64_t N, const LatticeParams& lp) {
  require_separated(N, lp);
  const std::int64_t low2 = 16 * N * N * N * N * N * N;  // (4N^3)^2
  IntThreshold high2(PowTerm{Rational(1, 4), lp.tau1 * 2, N});
  return [low2, high2](const IntVec& j) {
    std::int64_t q = norm2(j);
    if (q < low2) return SiteClass::low;
    if (high2.gt(q)) return SiteClass::high;
    return SiteClass::rest;
  };
}

BilinearClassifier::BilinearClassifier(const CutParams& cp, const Problem& problem, const LatticeParams& lp)
    : cp_(cp),
      problem_(problem),
      lp_(lp),
      cache_(std::make_shared<PresentationCache>(make_ball(cp.N, problem))),
      high2_(PowTerm{cp.theta * cp.theta, lp.tau1 * 2, cp.N}),
      low_bound_(cp.mu * Rational(cp.N) * cp.N * cp.N) {}

std::optional<Cut> BilinearClassifier::cut_of(const IntVec& x) {
  auto it = cuts_.find(x);
  if (it != cuts_.end()) return it->second;
  std::optional<Cut> c;
  if (!problem_.is_site(x)) c = find_cut(x, cache_->get(x), cp_, problem_);
  cuts_.emplace(x, c);
  return c;
}

std::optional<BilinearInfo> BilinearClassifier::classify(const Monomial& mono) {
  if (mono.kabs() >= cp_.N) return std::nullopt;
  struct Factor {
    IntVec site;
    int sign;
  };
  std::vector<Factor> high;
  Monomial low = mono;
  low.alpha.clear();
  low.beta.clear();
  for (int pass = 0; pass < 2; ++pass) {
    const MultiIndex& src = pass == 0 ? mono.alpha : mono.beta;
    MultiIndex& dst = pass == 0 ? low.alpha : low.beta;
    for (const auto& [site, e] : src) {
      if (high2_.gt(norm2(site))) {
        for (int i = 0; i < e; ++i) high.push_back({site, pass == 0 ? 1 : -1});
        if (high.size() > 2) return std::nullopt;
      } else {
        dst.push_back({site, e});
      }
    }
  }
  if (high.size() != 2) return std::nullopt;
  if (!low_momentum_sum_below(low, low_bound_)) return std::nullopt;
  // alpha factors come first, each multi-index is already sign-lex sorted
  auto cm = cut_of(high[0].site);
  auto cn = cut_of(high[1].site);
  if (!cm || !cn || cm->ell != cn->ell || cm->ell == 0 || cm->ell == problem_.d) return std::nullopt;
  BilinearInfo info;
  info.sigma = high[0].sign;
  info.sigma_p = high[1].sign;
  info.m = high[0].site;
  info.n = high[1].site;
  info.ell = cm->ell;
  info.A = cn->subspace < cm->subspace ? cn->subspace : cm->subspace;
  info.h.resize(problem_.d);
  for (int i = 0; i < problem_.d; ++i) info.h[i] = info.sigma * info.m[i] + info.sigma_p * info.n[i];
  info.low = std::move(low);
  return info;
}

template <class C>
Series<C> project_bilinear(const Series<C>& F, BilinearClassifier& cls) {
  Series<C> out(F.b);
  out.trunc = F.trunc;
  out.momentum_flag = F.momentum_flag;
  for (const auto& [m, c] : F.terms)
    if (cls.classify(m)) out.terms.emplace(m, c);
  return out;
}

template <class C>
Series<C> project_bilinear(const Series<C>& F, const CutParams& cp, const Problem& problem, const LatticeParams& lp) {
  BilinearClassifier cls(cp, problem, lp);
  return project_bilinear(F, cls);
}

bool ClassKey::operator<(const ClassKey& o) const {
  if (sigma != o.sigma) return sigma < o.sigma;
  if (sigma_p != o.sigma_p) return sigma_p < o.sigma_p;
  if (int c = signlex_compare(h, o.h)) return c < 0;
  if (A < o.A) return true;
  if (o.A < A) return false;
  return low < o.low;
}

namespace {

IntVec concat(const IntVec& a, const IntVec& b) {
  IntVec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

template <class C>
QTDecomposition<C> toeplitz_fit(const Series<C>& F, BilinearClassifier& cls, int d) {
  QTDecomposition<C> out;
  out.cp = cls.params();
  out.projected = Series<C>(F.b);
  out.toeplitz = Series<C>(F.b);
  out.diff = Series<C>(F.b);
  out.weight = cls.params().Ntau.power(4 * d).to_double();
  std::vector<std::pair<const Monomial*, ClassKey>> members;
  for (const auto& [m, c] : F.terms) {
    auto info = cls.classify(m);
    if (!info) continue;
    out.projected.terms.emplace(m, c);
    ClassKey key{info->sigma, info->sigma_p, info->h, info->A, info->low};
    auto [it, fresh] = out.classes.try_emplace(key);
    auto& e = it->second;
    ++e.members;
    if (fresh || signlex_less(concat(info->m, info->n), concat(e.rep_m, e.rep_n))) {
      e.rep_m = info->m;
      e.rep_n = info->n;
      e.coeff = c;
    }
    members.emplace_back(&m, std::move(key));
  }
  for (const auto& [mono, key] : members) {
    const auto& e = out.classes.at(key);
    out.toeplitz.add(*mono, e.coeff);
    out.diff.add(*mono, out.projected.terms.at(*mono) - e.coeff);
  }
  return out;
}

template <class C>
QTDecomposition<C> toeplitz_fit(const Series<C>& F, const CutParams& cp, const Problem& problem,
                                const LatticeParams& lp) {
  BilinearClassifier cls(cp, problem, lp);
  return toeplitz_fit(F, cls, problem.d);
}

std::vector<std::int64_t> default_N_list(std::int64_t K) {
  if (K < 1) throw ValidationError("K must be >= 1");
  return {K, K + 1, 2 * K};
}

std::vector<Rational> default_tau_list(int d, const LatticeParams& lp) {
  Rational hi = lp.tau_max(d);
  return {lp.tau0, (lp.tau0 + hi) / 2, hi};
}

template <class C>
QTNormReport quasi_toeplitz_norm(const Series<C>& F, const Rational& theta, const Rational& mu,
                                 const std::vector<std::int64_t>& N_list, const std::vector<Rational>& tau_list,
                                 const NormCtx& ctx, const Problem& problem, const LatticeParams& lp) {
  QTNormReport rep;
  rep.plain = vector_field_norm(F, ctx);
  rep.value = rep.plain;
  auto taus = tau_list.empty() ? default_tau_list(problem.d, lp) : tau_list;
  for (std::int64_t N : N_list) {
    for (const auto& tau : taus) {
      CutParams cp = CutParams::make(N, theta, mu, tau);
      try {
        validate_cut(cp, problem, lp);
      } catch (const ValidationError& e) {
        rep.warnings.push_back("skipped N=" + std::to_string(N) + " tau=" + to_string(tau) + ": " + e.what());
        continue;
      }
      auto dec = toeplitz_fit(F, cp, problem, lp);
      QTNormEntry e;
      e.N = N;
      e.tau = cp.tau;
      e.norm_F = rep.plain;
      e.norm_toeplitz = vector_field_norm(dec.toeplitz, ctx);
      e.norm_error = dec.diff.empty() ? 0.0 : dec.weight * vector_field_norm(dec.diff, ctx);
      e.projected_terms = dec.projected.size();
      e.classes = dec.classes.size();
      if (e.projected_terms > 0) rep.largest_nonempty_N = std::max(rep.largest_nonempty_N, N);
      if (!std::isfinite(e.norm_error)) rep.warnings.push_back("error weight N^(4d tau) overflows at N=" + std::to_string(N));
      rep.value = std::max(rep.value, e.value());
      rep.entries.push_back(e);
    }
  }
  if (rep.largest_nonempty_N == 0) rep.warnings.push_back("bilinear projection empty for every N: the norm reduces to ||X_F||");
  return rep;
}

DiagonalDecomposition diagonal_decompose(const GSeries& Q, const CutParams& cp, const NormCtx& ctx,
                                         const Problem& problem, const LatticeParams& lp) {
  for (const auto& [m, c] : Q.terms) {
    bool diag = m.kabs() == 0 && m.lsum() == 0 && m.alpha.size() == 1 && m.alpha == m.beta && m.alpha[0].second == 1;
    if (!diag) throw ValidationError("diagonal_decompose expects only Q_m z_m zbar_m terms, got " + m.str());
  }
  BilinearClassifier cls(cp, problem, lp);
  auto dec = toeplitz_fit(Q, cls, problem.d);
  DiagonalDecomposition out;
  out.weight = dec.weight;
  const double nQ = vector_field_norm(Q, ctx);
  const double nT = vector_field_norm(dec.toeplitz, ctx);
  const double nE = dec.diff.empty() ? 0.0 : dec.weight * vector_field_norm(dec.diff, ctx);
  out.qt_norm = std::max({nQ, nT, nE});
  for (const auto& [key, e] : dec.classes) {
    out.Qhat[key.A] = e.coeff;
    out.max_Qhat = std::max(out.max_Qhat, coeff_norm(e.coeff, ctx.coeff));
  }
  for (const auto& [m, c] : dec.projected.terms) {
    auto info = cls.classify(m);
    const GridCoeff& hat = out.Qhat.at(info->A);
    GridCoeff bar = c - hat;
    for (auto& x : bar.v) x *= dec.weight;
    out.site_subspace[info->m] = info->A;
    out.max_Qbar = std::max(out.max_Qbar, coeff_norm(bar, ctx.coeff));
    out.Qbar[info->m] = std::move(bar);
  }
  for (const auto& [m, c] : Q.terms) out.max_Q = std::max(out.max_Q, coeff_norm(c, ctx.coeff));
  return out;
}

void validate_split(const SplitParams& sp, const Problem& problem, const LatticeParams& lp) {
  const auto &a = sp.cp, &b = sp.cp_prime;
  if (a.N != b.N || compare(a.Ntau, b.Ntau) != 0) throw ValidationError("split parameters must share N and tau");
  if (!(b.theta > a.theta)) throw ValidationError("need theta' > theta");
  if (!(b.mu < a.mu)) throw ValidationError("need mu' < mu");
  if (sp.K_prime < 1 || !(a.N > sp.K_prime)) throw ValidationError("need N > K' >= 1");
  validate_cut(a, problem, lp);
  validate_cut(b, problem, lp);
  require_separated(a.N, lp);
  const Rational K(sp.K_prime);
  if (!(1 / (K * K) <= a.mu - b.mu)) throw ValidationError("1/K'^2 > mu - mu'");
  Rational e = lp.tau0 * (4 * problem.d) - 4;
  if (!(compare(2 * b.mu, PowTerm{b.theta - a.theta, e, sp.K_prime}) < 0))
    throw ValidationError("2 mu' / K'^(4d tau0 - 4) >= theta' - theta");
  if (sp.s_pair) {
    auto [s, s2] = *sp.s_pair;
    double lhs = -(s - s2) * sp.K_prime + to_double(lp.tau1) * std::log(static_cast<double>(sp.K_prime));
    if (!(lhs < 0)) throw ValidationError("e^(-(s-s')K') K'^tau1 >= 1");
  }
}

template <class C>
Series<C> splitting_check(const Series<C>& f1, const Series<C>& f2, const SplitParams& sp, const Problem& problem,
                          const LatticeParams& lp) {
  validate_split(sp, problem, lp);
  const std::int64_t N = sp.cp.N;
  auto site_cls = make_site_classifier(N, lp);
  BilinearClassifier pi(sp.cp, problem, lp), pi2(sp.cp_prime, problem, lp);

  auto P1 = project_bilinear(f1, pi), P2 = project_bilinear(f2, pi);
  auto lowp = pred_low_momentum(N, sp.cp.mu * 2);
  auto L1 = project(f1, lowp), L2 = project(f2, lowp);
  auto hi = pred_high_freq(N);
  auto U1 = project(f1, hi), U2 = project(f2, hi);
  auto notU1 = project(f1, [&](const Monomial& m) { return !hi(m); });

  Series<C> rhs = split_bracket(P1, P2, Trunc{}, part_H, site_cls);
  rhs = rhs + split_bracket(P1, L2, Trunc{}, part_Itheta | part_L, site_cls);
  rhs = rhs + split_bracket(L1, P2, Trunc{}, part_Itheta | part_L, site_cls);
  rhs = rhs + poisson_bracket(U1, f2);
  rhs = rhs + poisson_bracket(notU1, U2);

  auto lhs = project_bilinear(poisson_bracket(f1, f2), pi2);
  return lhs - project_bilinear(rhs, pi2);
}

#define QTKAM_TOEPLITZ(C)                                                                                         \
  template Series<C> project_bilinear(const Series<C>&, BilinearClassifier&);                                     \
  template Series<C> project_bilinear(const Series<C>&, const CutParams&, const Problem&, const LatticeParams&);  \
  template QTDecomposition<C> toeplitz_fit(const Series<C>&, BilinearClassifier&, int);                          \
  template QTDecomposition<C> toeplitz_fit(const Series<C>&, const CutParams&, const Problem&,                   \
                                           const LatticeParams&);                                                \
  template QTNormReport quasi_toeplitz_norm(const Series<C>&, const Rational&, const Rational&,                  \
                                            const std::vector<std::int64_t>&, const std::vector<Rational>&,      \
                                            const NormCtx&, const Problem&, const LatticeParams&);               \
  template Series<C> splitting_check(const Series<C>&, const Series<C>&, const SplitParams&, const Problem&,     \
                                     const LatticeParams&);

QTKAM_TOEPLITZ(GridCoeff)
QTKAM_TOEPLITZ(ExactCoeff)

}  // namespace qtkam
