#pragma once

#include "qtkam/rational.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace qtkam {

using IntVec = std::vector<std::int64_t>;

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Problem {
  int d = 1;
  int b = 1;
  std::vector<IntVec> sites;  // sites[0] is the origin
  std::int64_t C1 = 1;

  static Problem make(int d, std::vector<IntVec> sites);
  bool is_site(const IntVec& x) const;
  // pi(k) = sum_i n^(i) k_i
  IntVec site_momentum(const std::vector<int>& k) const;
};

enum class Mode { paper, desk };
Mode parse_mode(const std::string& s);
std::string to_string(Mode m);

struct LatticeParams {
  Rational tau0{2};
  Rational tau1{17};
  Rational c{Rational(1, 2)};
  Rational C{4};
  std::int64_t N0 = 1;
  Mode mode = Mode::desk;

  Rational tau_max(int d) const { return tau1 / (4 * d); }
};

struct ValidationReport {
  struct Item {
    std::string name;
    bool pass;
    std::string detail;
  };
  Mode mode = Mode::desk;
  std::vector<Item> items;
  bool ok = true;

  std::vector<std::string> failures() const;
};

// Throws ValidationError when tau1 <= 4 d tau0 or c, C are inconsistent.
ValidationReport validate(const Problem& problem, const LatticeParams& lp);

// Allowable (N, theta, mu, tau). N^tau is kept as a PowTerm so that the
// irrational exponents of standard cuts stay exact.
struct CutParams {
  std::int64_t N = 2;
  Rational theta{1};
  Rational mu{1};
  PowTerm Ntau;  // N^tau
  double tau = 0;

  static CutParams make(std::int64_t N, const Rational& theta, const Rational& mu, const Rational& tau);
  static CutParams from_power(std::int64_t N, const Rational& theta, const Rational& mu, const PowTerm& Ntau);

  PowTerm mu_N_tau() const { return Ntau.scaled(mu); }
  PowTerm theta_N_4dtau(int d) const { return Ntau.power(4 * d).scaled(theta); }
};

// Checks c < theta, mu < C, tau range and theta N^(4 d tau) > mu N^tau.
void validate_cut(const CutParams& cp, const Problem& problem, const LatticeParams& lp);

struct Grid {
  std::vector<std::pair<double, double>> box;  // per-dimension [lo, hi]
  std::vector<int> shape;                      // points per dimension
  std::vector<std::vector<double>> points;     // row-major tensor order

  static Grid tensor(const std::vector<std::pair<double, double>>& box, int per_dim);
  static Grid single(const std::vector<double>& xi);
  std::size_t size() const { return points.size(); }
  double spacing(int axis) const;
  double diameter() const;
  double volume() const;
  // Index of the neighbour along axis (offset +-1) or -1.
  long neighbour(std::size_t idx, int axis, int offset) const;
};

struct AnalysisParams {
  double r = 0.1;
  double s = 0.5;
  double rho = 0.1;
  double gamma = 1e-3;
  int K = 3;
  int degree_max = 4;
  Grid grid;
  double D = 1;
};

}  // namespace qtkam
