#pragma once

#include "qtkam/lattice.hpp"
#include "qtkam/series.hpp"

#include <memory>
#include <optional>

namespace qtkam {

// Low variables |j| < 4N^3, high variables |j| > N^tau1 / 2.
SiteClassifier make_site_classifier(std::int64_t N, const LatticeParams& lp);
// Throws ValidationError unless 4N^3 < N^tau1 / 2.
void require_separated(std::int64_t N, const LatticeParams& lp);

struct BilinearInfo {
  int sigma = 1, sigma_p = 1;
  IntVec m, n;
  int ell = 0;
  Presentation A;  // sign-lex smaller of the two cut subspaces
  IntVec h;        // sigma m + sigma' n
  Monomial low;    // k, l and the low-site exponents
};

// Classifies monomials as (N, theta, mu, tau)-bilinear; owns a presentation memo.
class BilinearClassifier {
 public:
  BilinearClassifier(const CutParams& cp, const Problem& problem, const LatticeParams& lp);
  std::optional<BilinearInfo> classify(const Monomial& mono);
  const CutParams& params() const { return cp_; }
  const Problem& problem() const { return problem_; }

 private:
  std::optional<Cut> cut_of(const IntVec& x);
  CutParams cp_;
  Problem problem_;
  LatticeParams lp_;
  std::shared_ptr<PresentationCache> cache_;
  IntThreshold high2_;  // (theta N^tau1)^2
  Rational low_bound_;  // mu N^3
  std::map<IntVec, std::optional<Cut>> cuts_;
};

template <class C>
Series<C> project_bilinear(const Series<C>& F, BilinearClassifier& cls);
template <class C>
Series<C> project_bilinear(const Series<C>& F, const CutParams& cp, const Problem& problem, const LatticeParams& lp);

struct ClassKey {
  int sigma = 1, sigma_p = 1;
  IntVec h;
  Presentation A;
  Monomial low;
  bool operator<(const ClassKey& o) const;
};

template <class C>
struct ClassEntry {
  IntVec rep_m, rep_n;  // sign-lex minimal (m, n) in the class
  C coeff;
  std::size_t members = 0;
};

template <class C>
struct QTDecomposition {
  CutParams cp;
  Series<C> projected;  // Pi F
  Series<C> toeplitz;   // the piecewise Toeplitz witness, on the support of Pi F
  Series<C> diff;       // Pi F - toeplitz; the error part is N^{4d tau} diff
  std::map<ClassKey, ClassEntry<C>> classes;
  double weight = 1;  // N^{4 d tau}; the error part is weight * diff
};

template <class C>
QTDecomposition<C> toeplitz_fit(const Series<C>& F, BilinearClassifier& cls, int d);
template <class C>
QTDecomposition<C> toeplitz_fit(const Series<C>& F, const CutParams& cp, const Problem& problem,
                                const LatticeParams& lp);

struct QTNormEntry {
  std::int64_t N = 0;
  double tau = 0;
  double norm_F = 0, norm_toeplitz = 0, norm_error = 0;
  std::size_t projected_terms = 0, classes = 0;
  double value() const { return std::max({norm_F, norm_toeplitz, norm_error}); }
};

struct QTNormReport {
  double value = 0;
  double plain = 0;  // ||X_F||
  std::vector<QTNormEntry> entries;
  std::int64_t largest_nonempty_N = 0;
  std::vector<std::string> warnings;
};

std::vector<std::int64_t> default_N_list(std::int64_t K);
// tau0, the midpoint and tau1/4d
std::vector<Rational> default_tau_list(int d, const LatticeParams& lp);

// Finite-grid surrogate of the quasi-Toeplitz norm: max over (N, tau) in the lists
// of max(||X_F||, ||X_toeplitz||, ||X_error||). Empty tau list means the default.
template <class C>
QTNormReport quasi_toeplitz_norm(const Series<C>& F, const Rational& theta, const Rational& mu,
                                 const std::vector<std::int64_t>& N_list, const std::vector<Rational>& tau_list,
                                 const NormCtx& ctx, const Problem& problem, const LatticeParams& lp);

struct DiagonalDecomposition {
  std::map<Presentation, GridCoeff> Qhat;
  std::map<IntVec, GridCoeff> Qbar;
  std::map<IntVec, Presentation> site_subspace;
  double weight = 1;  // N^{4 d tau}
  double qt_norm = 0; // max(||X_Q||, ||X_Qhat||, ||X_Qbar||) at this (N, tau)
  double max_Q = 0, max_Qhat = 0, max_Qbar = 0;
  bool bounds_hold() const {
    return max_Q <= 2 * qt_norm && max_Qhat <= 2 * qt_norm && max_Qbar <= 2 * qt_norm;
  }
};

// Q = sum Q_m z_m zbar_m only; throws on other terms.
DiagonalDecomposition diagonal_decompose(const GSeries& Q, const CutParams& cp, const NormCtx& ctx,
                                         const Problem& problem, const LatticeParams& lp);

struct SplitParams {
  CutParams cp;       // (N, theta, mu, tau)
  CutParams cp_prime; // (N, theta', mu', tau) with theta' > theta, mu' < mu
  std::int64_t K_prime = 0;  // N > K' required
  std::optional<std::pair<double, double>> s_pair;  // (s, s') for the third condition
};
// Throws ValidationError unless the splitting relations hold.
void validate_split(const SplitParams& sp, const Problem& problem, const LatticeParams& lp);

// Pi'{f1,f2} minus the assembled splitting formula; zero when the identity holds.
template <class C>
Series<C> splitting_check(const Series<C>& f1, const Series<C>& f2, const SplitParams& sp, const Problem& problem,
                          const LatticeParams& lp);

}  // namespace qtkam
