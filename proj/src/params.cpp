#include "qtkam/params.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace qtkam {

namespace {
std::int64_t isqrt_ceil_norm(const IntVec& v) {
  std::int64_t sq = 0;
  for (auto x : v) sq += x * x;
  auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(sq)));
  while (r * r < sq) ++r;
  while (r > 0 && (r - 1) * (r - 1) >= sq) --r;
  return r;
}
}  // namespace

Problem Problem::make(int d, std::vector<IntVec> sites) {
  if (d < 1) throw ValidationError("d must be >= 1");
  if (sites.empty()) throw ValidationError("at least one tangential site required");
  std::set<IntVec> seen;
  for (const auto& s : sites) {
    if (static_cast<int>(s.size()) != d) throw ValidationError("site dimension mismatch");
    if (!seen.insert(s).second) throw ValidationError("tangential sites must be distinct");
  }
  for (auto x : sites[0])
    if (x != 0) throw ValidationError("the first tangential site must be the origin");
  Problem p;
  p.d = d;
  p.b = static_cast<int>(sites.size());
  p.sites = std::move(sites);
  // C1 = max |n^(i)|, rounded up so that |x| < C1 N stays an integer test.
  std::int64_t c1 = 1;
  for (const auto& s : p.sites) c1 = std::max(c1, isqrt_ceil_norm(s));
  p.C1 = c1;
  return p;
}

bool Problem::is_site(const IntVec& x) const {
  return std::find(sites.begin(), sites.end(), x) != sites.end();
}

IntVec Problem::site_momentum(const std::vector<int>& k) const {
  IntVec out(d, 0);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < d; ++j) out[j] += sites[i][j] * k[i];
  return out;
}

Mode parse_mode(const std::string& s) {
  if (s == "paper") return Mode::paper;
  if (s == "desk") return Mode::desk;
  throw ValidationError("mode must be paper or desk, got " + s);
}

std::string to_string(Mode m) { return m == Mode::paper ? "paper" : "desk"; }

std::vector<std::string> ValidationReport::failures() const {
  std::vector<std::string> out;
  for (const auto& it : items)
    if (!it.pass) out.push_back(it.name);
  return out;
}

ValidationReport validate(const Problem& problem, const LatticeParams& lp) {
  const int d = problem.d;
  if (lp.tau0 <= 0 || lp.tau1 <= 0) throw ValidationError("tau0, tau1 must be positive");
  if (lp.tau1 <= 4 * d * lp.tau0)
    throw ValidationError("tau1 <= 4d*tau0: allowable tau range is empty");
  if (lp.c <= 0 || lp.C <= lp.c) throw ValidationError("need 0 < c < C");
  if (lp.N0 < 1) throw ValidationError("N0 must be positive");

  ValidationReport rep;
  rep.mode = lp.mode;
  auto add = [&](std::string name, bool pass, std::string detail) {
    rep.items.push_back({std::move(name), pass, std::move(detail)});
  };
  Rational lower = std::max<Rational>(Rational(d + problem.b), Rational(12));
  add("τ0>max(d+b,12)", lp.tau0 > lower, "tau0=" + to_string(lp.tau0) + " bound=" + to_string(lower));
  Rational t1 = Rational(ipow(BigInt(4 * d), d + 1)) * (lp.tau0 + 1);
  add("τ1=(4d)^(d+1)(τ0+1)", lp.tau1 == t1, "tau1=" + to_string(lp.tau1) + " expected=" + to_string(t1));
  add("c≤1/2", lp.c <= Rational(1, 2), "c=" + to_string(lp.c));
  add("C≥4", lp.C >= 4, "C=" + to_string(lp.C));
  BigInt fact = 1;
  for (int i = 2; i <= d; ++i) fact *= i;
  Rational n0min = Rational(fact * ipow(BigInt(problem.C1), d)) * lp.C / lp.c;
  add("N0≥d!C1^d C/c", Rational(lp.N0) >= n0min, "N0=" + std::to_string(lp.N0) + " bound=" + to_string(n0min));
  for (const auto& it : rep.items)
    if (!it.pass && lp.mode == Mode::paper) rep.ok = false;
  return rep;
}

CutParams CutParams::make(std::int64_t N, const Rational& theta, const Rational& mu, const Rational& tau) {
  return from_power(N, theta, mu, PowTerm{Rational(1), tau, N});
}

CutParams CutParams::from_power(std::int64_t N, const Rational& theta, const Rational& mu, const PowTerm& Ntau) {
  if (N < 1) throw ValidationError("N must be positive");
  CutParams cp;
  cp.N = N;
  cp.theta = theta;
  cp.mu = mu;
  cp.Ntau = Ntau;
  cp.Ntau.N = N;
  cp.tau = N > 1 ? Ntau.log_value() / std::log(static_cast<double>(N)) : to_double(Ntau.exp);
  return cp;
}

void validate_cut(const CutParams& cp, const Problem& problem, const LatticeParams& lp) {
  const int d = problem.d;
  if (!(lp.c < cp.theta && cp.theta < lp.C)) throw ValidationError("theta outside (c, C)");
  if (!(lp.c < cp.mu && cp.mu < lp.C)) throw ValidationError("mu outside (c, C)");
  PowTerm lo{Rational(1), lp.tau0, cp.N}, hi{Rational(1), lp.tau_max(d), cp.N};
  if (cp.N > 1 && (compare(cp.Ntau, lo) < 0 || compare(cp.Ntau, hi) > 0))
    throw ValidationError("tau outside [tau0, tau1/4d]");
  if (compare(cp.theta_N_4dtau(d), cp.mu_N_tau()) <= 0)
    throw ValidationError("theta N^(4d tau) <= mu N^tau: cuts are not unique");
}

Grid Grid::tensor(const std::vector<std::pair<double, double>>& box, int per_dim) {
  if (box.empty()) throw ValidationError("empty parameter box");
  if (per_dim < 1) throw ValidationError("xi_grid_per_dim must be >= 1");
  for (auto [lo, hi] : box)
    if (!(lo <= hi)) throw ValidationError("parameter box with lo > hi");
  Grid g;
  g.box = box;
  g.shape.assign(box.size(), per_dim);
  std::size_t total = 1;
  for (int s : g.shape) total *= s;
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::vector<double> pt(box.size());
    std::size_t rem = idx;
    for (int a = static_cast<int>(box.size()) - 1; a >= 0; --a) {
      int i = static_cast<int>(rem % per_dim);
      rem /= per_dim;
      auto [lo, hi] = box[a];
      pt[a] = per_dim == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (per_dim - 1);
    }
    g.points.push_back(pt);
  }
  return g;
}

Grid Grid::single(const std::vector<double>& xi) {
  Grid g;
  for (double x : xi) g.box.push_back({x, x});
  g.shape.assign(xi.size(), 1);
  g.points.push_back(xi);
  return g;
}

double Grid::spacing(int axis) const {
  if (shape[axis] <= 1) return 0;
  return (box[axis].second - box[axis].first) / (shape[axis] - 1);
}

double Grid::diameter() const {
  double sq = 0;
  for (auto [lo, hi] : box) sq += (hi - lo) * (hi - lo);
  return std::sqrt(sq);
}

double Grid::volume() const {
  double v = 1;
  for (auto [lo, hi] : box) v *= (hi - lo);
  return v;
}

long Grid::neighbour(std::size_t idx, int axis, int offset) const {
  std::size_t stride = 1;
  for (int a = static_cast<int>(shape.size()) - 1; a > axis; --a) stride *= shape[a];
  long coord = static_cast<long>((idx / stride) % shape[axis]) + offset;
  if (coord < 0 || coord >= shape[axis]) return -1;
  return static_cast<long>(idx) + offset * static_cast<long>(stride);
}

}  // namespace qtkam
