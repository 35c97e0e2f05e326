#pragma once

#include "qtkam/lattice.hpp"
#include "qtkam/series.hpp"
#include "qtkam/toeplitz.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qtkam {

// Small divisors, smallness violations and other numerical failures (CLI exit code 2).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// N = <omega, I> + sum Omega_n z_n zbar_n with Omega_n = |n|^2 + Omega~_n, sampled on a xi-grid.
struct NormalForm {
  Grid grid;
  std::vector<char> alive;  // surviving grid points
  GridCoeff e;
  std::vector<GridCoeff> omega;                // b entries
  std::map<IntVec, GridCoeff> omega_tilde;     // absent means 0
  std::vector<IntVec> support;                 // normal sites of the Galerkin truncation

  double omega_at(int j, std::size_t i) const { return omega[j].at(i).real(); }
  double Omega_at(const IntVec& n, std::size_t i) const;
  // <k, omega> + sum (alpha - beta) Omega at grid point i
  double eigenvalue(const Monomial& m, std::size_t i) const;
  double eigenvalue(const IntVec& k, const std::vector<std::pair<IntVec, int>>& l, std::size_t i) const;
  std::size_t n_alive() const;
  CoeffNormCtx coeff_ctx() const { return {&grid, &alive}; }
  // <omega, I> + sum over sites of Omega_n z zbar
  GSeries as_series(int b, const std::vector<IntVec>& sites) const;
};

std::vector<IntVec> cube_support(const Problem& problem, std::int64_t R);  // |m|_inf <= R minus sites

struct NlsSetup {
  NormalForm nf;
  GSeries P;
};
// g(y) = y^p, u_{n_j} = sqrt(I0_j + I_j) e^{i theta_j}, u_n = z_n on the support.
NlsSetup build_nls(const Problem& problem, int p, const std::vector<double>& I0, double r,
                   const std::vector<IntVec>& support, const Grid& grid, int degree_max);

struct MelnikovRecord {
  std::string kind;  // i, ii, iii, iv
  IntVec k;
  std::string detail;  // h, l or (m^g, n^g)
  double threshold = 0;
  double value = 0;  // achieved |divisor|
  bool pass = true;
};

struct MelnikovReport {
  std::vector<MelnikovRecord> records;
  bool pass = true;
  std::size_t n_fail = 0;
  std::vector<std::string> warnings;
};

struct GoodPoint {
  std::int64_t N = 0;
  Presentation A;
  IntVec mg;
};

struct MelnikovOptions {
  std::int64_t K = 3;
  double gamma = 1e-3;
  std::vector<std::int64_t> N_list;   // empty means {K}
  std::int64_t good_point_bound = 0;  // 0 means 2 N^tau1 + 2 T C1 N + 16, T the good threshold
  bool keep_passes = true;
};

// Good points for condition iv: N in [K, 2K^{tau1/tau0}] from the list, 1 <= ell < d, p_ell < c N^{tau1/4d}.
std::vector<GoodPoint> good_point_table(const MelnikovOptions& opt, const Problem& problem, const LatticeParams& lp,
                                        std::vector<std::string>* warnings = nullptr);

MelnikovReport melnikov_check(const NormalForm& nf, std::size_t xi_index, const MelnikovOptions& opt,
                              const Problem& problem, const LatticeParams& lp,
                              const std::vector<GoodPoint>* table = nullptr);

// omega(xi) = omega0 + xi, Omega_n constant (|n|^2 unless given).
struct AffineFamily {
  std::vector<double> omega0;
  std::vector<std::pair<double, double>> box;
  std::map<IntVec, double> Omega;
  double Omega_of(const IntVec& n) const;
  double volume() const;
  double diameter() const;
};

struct ResonanceQuery {
  IntVec k;
  std::vector<std::pair<IntVec, int>> l;
  std::int64_t h = 0;
  bool union_h = false;  // distance to the nearest integer instead of a fixed h
  double gamma = 0;
  std::int64_t K = 1;
  double rho = 0;
  double delta() const;  // gamma K^{-rho}
};

struct MeasureEstimate {
  double measure = 0, fraction = 0, sigma = 0;  // Monte Carlo, sigma of the measure
  double bound = 0;                             // 2 M^{-1} D^{b-1} gamma K^{-rho} (times the h count)
  std::optional<double> exact;                  // b = 1 interval computation
  std::size_t samples = 0;
};

MeasureEstimate resonant_measure(const AffineFamily& fam, const ResonanceQuery& q, std::size_t samples,
                                 std::uint64_t seed);

struct ExcludedMeasure {
  double fraction = 0;       // failing alive grid points / alive grid points
  double bound = 0;          // union bound as a fraction of the box
  double constant = 0;       // bound / (gamma K^{-tau0 + b + d/2})
  std::size_t points = 0, failed = 0;
  std::vector<char> pass;    // per grid point
};

ExcludedMeasure excluded_measure(const NormalForm& nf, const MelnikovOptions& opt, const Problem& problem,
                                 const LatticeParams& lp, int jobs = 1);

template <class C>
struct RParts {
  Series<C> R;     // 2|l| + |alpha| + |beta| <= 2
  Series<C> Ravg;  // k = 0 action-linear and diagonal quadratic part
};
template <class C> RParts<C> extract_R(const Series<C>& P);

struct Homological {
  GSeries F;
  double residual = 0;  // relative max coefficient of {N,F} - rhs on alive points
  double min_divisor = 0;
};
// Solves {N, F} = rhs on alive points; rhs must have no k = 0, alpha = beta terms.
Homological solve_homological(const NormalForm& nf, const GSeries& rhs, std::int64_t K, double gamma,
                              const Problem& problem, const LatticeParams& lp);

struct Schedule {
  double s0 = 0.5, r0 = 0.1, eps0 = 0;
  double c = 1;                   // schedule constant
  Rational chi{13, 10};
  Rational theta0{3, 5}, mu0{39, 10};
  std::int64_t K0 = 3, K_min = 2, K_cap = 6;
  double gamma = 1e-3;
  double rho = 0.1;  // site weight e^{rho|n|}|n|^{d+1} in the norms
  LatticeParams lp;
  int d = 2;

  NormCtx norm_ctx(double r, double s, const NormalForm& nf) const;

  double s(int nu) const;  // s0 (1 - sum_{i=2}^{nu+1} 2^{-i})
  Rational drift(int nu) const;  // sum_{i=1}^{nu} chi^{-i}
  Rational theta(int nu) const { return theta0 + drift(nu); }
  Rational mu(int nu) const { return mu0 - drift(nu); }
  // c (s_{nu-1} - s_nu)^{-1} ln(1/eps_nu), clamped to [K_min, K_cap]
  std::int64_t K(int nu, double eps_nu) const;
  double predicted_eps(double eps_prev, std::int64_t K_prev) const;  // c gamma^-2 K^{3 tau1^2/tau0} eps^{4/3}
  bool drift_budget_ok() const;  // theta0 + 1/(chi-1) < C and mu0 - 1/(chi-1) > c
};

struct KamState {
  NormalForm nf;
  GSeries P;
  double r = 0.1, s = 0.5;
  std::int64_t K = 3;
  Rational theta{3, 5}, mu{39, 10};
  double gamma = 1e-3;
  double eps = 0;
  int step = 0;
};

struct StepOptions {
  int lie_order = 4;
  int degree_max = 4;
  int jobs = 1;
  std::vector<std::int64_t> N_list;
  std::int64_t good_point_bound = 0;
  bool qt_norm = false;  // also compute the quasi-Toeplitz surrogate of P_+
};

struct StepReport {
  int step = 0;
  double eps_in = 0, eps_out = 0, predicted_eps = 0;
  double eps_out_plain_exponent = 0;  // predicted with K^{4 d tau1} instead of K^{3 tau1^2/tau0}
  std::int64_t K = 0;
  double r = 0, s = 0;
  Rational theta, mu;
  std::size_t alive = 0, grid = 0;
  double homological_residual = 0, min_divisor = 0;
  double omega_shift = 0;   // max |omega_+ - omega| over alive points
  double imag_residue = 0;  // imaginary part of <R> sent back to P_+
  double lie_tail = 0;      // norm of the last Lie term
  double dropped = 0;
  double norm_F = 0;
  double qt_norm = -1;
  std::size_t terms = 0;
  std::vector<std::string> warnings;
};

struct StepResult {
  KamState state;
  GSeries F;
  StepReport report;
};

StepResult kam_step(const KamState& st, const Schedule& sched, const StepOptions& opt, const Problem& problem,
                    const LatticeParams& lp);

struct IterationReport {
  std::vector<StepReport> steps;
  std::vector<double> eps;          // eps_0 .. eps_n
  std::vector<std::int64_t> K;
  std::vector<double> log_ratio;    // log eps_{nu+1} / log eps_nu
  double fitted_exponent = 0;       // slope of log eps_{nu+1} against log eps_nu
  double fitted_constant = 0;       // eps_{nu+1} ~ constant * eps_nu^{exponent}
  double max_omega_drift = 0;       // max_nu max_xi |omega_nu - omega_0|
  std::vector<GSeries> generators;  // F_0 .. F_{n-1}
  KamState final_state;
  std::string stop_reason;
};

KamState initial_state(const NlsSetup& nls, const Schedule& sched);
IterationReport iterate(const KamState& init, const Schedule& sched, const StepOptions& opt, int max_steps,
                        const Problem& problem, const LatticeParams& lp);

struct DenominatorReport {
  IntVec n;
  double value = 0;
  double bound = 0;
  bool in_span = false;  // pi(k) in the span of v_1..v_ell
  bool pass = false;
  int ell = 0;
};
// |<omega,k> + |m|^2 - |n|^2 + Omega^(A_m) - Omega^(A_n)| with n = m + pi(k).
DenominatorReport denominator_bound_check(const NormalForm& nf, std::size_t xi_index, const IntVec& k,
                                          const IntVec& m, std::int64_t K, double gamma, const CutParams& cp,
                                          const Problem& problem, const LatticeParams& lp);

}  // namespace qtkam
