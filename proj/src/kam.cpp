#include "qtkam/kam.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace qtkam {

namespace {

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(jobs > 0 ? jobs : 1, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

// All k in Z^b with |k|_1 <= kmax.
std::vector<IntVec> enumerate_k(int b, std::int64_t kmax) {
  std::vector<IntVec> out;
  IntVec k(b, 0);
  std::function<void(int, std::int64_t)> rec = [&](int j, std::int64_t left) {
    if (j == b) {
      out.push_back(k);
      return;
    }
    for (std::int64_t v = -left; v <= left; ++v) {
      k[j] = v;
      rec(j + 1, left - std::abs(v));
    }
    k[j] = 0;
  };
  if (kmax >= 0) rec(0, kmax);
  return out;
}

std::int64_t l1(const IntVec& k) {
  std::int64_t s = 0;
  for (auto x : k) s += std::abs(x);
  return s;
}

double l2(const IntVec& k) { return std::sqrt(static_cast<double>(norm2(k))); }

IntVec add(const IntVec& a, const IntVec& b, std::int64_t sb = 1) {
  IntVec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + sb * b[i];
  return out;
}

bool is_zero_vec(const IntVec& v) {
  return std::all_of(v.begin(), v.end(), [](auto x) { return x == 0; });
}

// K^x as a double without overflow surprises
double kpow(double K, double x) { return std::exp(x * std::log(K)); }

std::string format_l(const std::vector<std::pair<IntVec, int>>& l) {
  std::ostringstream os;
  for (std::size_t i = 0; i < l.size(); ++i) {
    if (i) os << " ";
    os << (l[i].second > 0 ? "+" : "") << l[i].second << "e" << format_vec(l[i].first);
  }
  return os.str();
}

GridCoeff full_vector(const GridCoeff& c, std::size_t n) {
  GridCoeff out;
  out.v.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.v[i] = c.at(i);
  return out;
}

double max_alive(const GridCoeff& c, const std::vector<char>& alive) {
  double m = 0;
  if (c.v.empty()) return 0;
  for (std::size_t i = 0; i < alive.size(); ++i)
    if (alive[i]) m = std::max(m, std::abs(c.at(i)));
  return m;
}

bool is_diag_quadratic(const Monomial& m) {
  return m.alpha.size() == 1 && m.alpha == m.beta && m.alpha[0].second == 1 && m.lsum() == 0;
}

bool is_action_linear(const Monomial& m) { return m.alpha.empty() && m.beta.empty() && m.lsum() == 1; }

bool is_constant(const Monomial& m) {
  return m.kabs() == 0 && m.lsum() == 0 && m.alpha.empty() && m.beta.empty();
}

}  // namespace

double NormalForm::Omega_at(const IntVec& n, std::size_t i) const {
  double v = static_cast<double>(norm2(n));
  auto it = omega_tilde.find(n);
  if (it != omega_tilde.end()) v += it->second.at(i).real();
  return v;
}

double NormalForm::eigenvalue(const Monomial& m, std::size_t i) const {
  double v = 0;
  for (std::size_t j = 0; j < m.k.size(); ++j) v += m.k[j] * omega_at(static_cast<int>(j), i);
  for (const auto& [n, e] : m.alpha) v += e * Omega_at(n, i);
  for (const auto& [n, e] : m.beta) v -= e * Omega_at(n, i);
  return v;
}

double NormalForm::eigenvalue(const IntVec& k, const std::vector<std::pair<IntVec, int>>& l, std::size_t i) const {
  double v = 0;
  for (std::size_t j = 0; j < k.size(); ++j) v += k[j] * omega_at(static_cast<int>(j), i);
  for (const auto& [n, e] : l) v += e * Omega_at(n, i);
  return v;
}

std::size_t NormalForm::n_alive() const {
  return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), 1));
}

GSeries NormalForm::as_series(int b, const std::vector<IntVec>& sites) const {
  GSeries out(b);
  for (int j = 0; j < b; ++j) {
    IntVec l(b, 0);
    l[j] = 1;
    out.add(make_monomial(b, {}, l), omega[j]);
  }
  for (const auto& n : sites) {
    GridCoeff c(cplx(static_cast<double>(norm2(n))));
    auto it = omega_tilde.find(n);
    if (it != omega_tilde.end()) c = c + it->second;
    out.add(make_monomial(b, {}, {}, {{n, 1}}, {{n, 1}}), c);
  }
  return out;
}

std::vector<IntVec> cube_support(const Problem& problem, std::int64_t R) {
  if (R < 0) throw ValidationError("support radius must be >= 0");
  std::vector<IntVec> out;
  IntVec x(problem.d, -R);
  while (true) {
    if (!problem.is_site(x)) out.push_back(x);
    int j = problem.d - 1;
    while (j >= 0 && x[j] == R) x[j--] = -R;
    if (j < 0) break;
    ++x[j];
  }
  std::sort(out.begin(), out.end(), signlex_less);
  return out;
}

NlsSetup build_nls(const Problem& problem, int p, const std::vector<double>& I0, double r,
                   const std::vector<IntVec>& support, const Grid& grid, int degree_max) {
  const int b = problem.b;
  if (p < 1) throw ValidationError("nonlinearity degree p must be >= 1");
  if (static_cast<int>(I0.size()) != b) throw ValidationError("need one amplitude I0 per tangential site");
  if (!(r > 0)) throw ValidationError("r must be positive");
  for (double a : I0)
    if (!(2 * r * r < a && a < 4 * r * r))
      throw ValidationError("amplitude I0 outside (2r^2, 4r^2)");
  if (grid.size() == 0 || grid.points[0].size() != static_cast<std::size_t>(b))
    throw ValidationError("parameter grid must have dimension b");

  std::vector<IntVec> modes = problem.sites;
  std::map<IntVec, int> index;
  for (int j = 0; j < b; ++j) index[modes[j]] = j;
  for (const auto& n : support) {
    if (problem.is_site(n)) throw ValidationError("support contains a tangential site " + format_vec(n));
    if (static_cast<int>(n.size()) != problem.d) throw ValidationError("support point dimension mismatch");
    if (index.emplace(n, static_cast<int>(modes.size())).second) modes.push_back(n);
  }
  const int M = static_cast<int>(modes.size());
  const int len = 2 * p;

  // Count tuples m_1 - m_2 + m_3 - ... - m_{2p} = 0 by their (a, b) exponent signature.
  std::map<std::vector<std::pair<int, int>>, std::int64_t> sig_count;
  std::vector<int> pick(len);
  std::function<void(int, IntVec)> rec = [&](int pos, IntVec acc) {
    if (pos == len - 1) {
      auto it = index.find(acc);  // last factor is conjugated: m_{2p} = acc
      if (it == index.end()) return;
      pick[pos] = it->second;
      std::vector<int> a(M, 0), bb(M, 0);
      for (int q = 0; q < len; ++q) (q % 2 == 0 ? a : bb)[pick[q]]++;
      std::vector<std::pair<int, int>> sig(M);
      for (int q = 0; q < M; ++q) sig[q] = {a[q], bb[q]};
      ++sig_count[sig];
      return;
    }
    for (int q = 0; q < M; ++q) {
      pick[pos] = q;
      rec(pos + 1, add(acc, modes[q], pos % 2 == 0 ? 1 : -1));
    }
  };
  rec(0, IntVec(problem.d, 0));

  GSeries P(b);
  P.trunc.degree_max = degree_max;
  for (const auto& [sig, count] : sig_count) {
    MultiIndex alpha, beta;
    int zdeg = 0;
    for (int q = b; q < M; ++q) {
      if (sig[q].first) alpha.push_back({modes[q], sig[q].first});
      if (sig[q].second) beta.push_back({modes[q], sig[q].second});
      zdeg += sig[q].first + sig[q].second;
    }
    if (zdeg > degree_max) continue;
    alpha = mi_normalize(alpha);
    beta = mi_normalize(beta);
    const int budget = (degree_max - zdeg) / 2;
    IntVec k(b, 0);
    std::vector<double> q(b);
    for (int j = 0; j < b; ++j) {
      k[j] = sig[j].first - sig[j].second;
      q[j] = 0.5 * (sig[j].first + sig[j].second);
    }
    // prod_j (I0_j + I_j)^{q_j} expanded with sum t_j <= budget
    IntVec t(b, 0);
    std::function<void(int, int, double)> expand = [&](int j, int left, double coef) {
      if (j == b) {
        IntVec l(t.begin(), t.end());
        P.add(make_monomial(b, k, l, alpha, beta), GridCoeff(cplx(coef * static_cast<double>(count))));
        return;
      }
      double binom = 1;
      for (int tj = 0; tj <= left; ++tj) {
        if (tj > 0) binom *= (q[j] - (tj - 1)) / tj;
        if (binom == 0) break;
        t[j] = tj;
        expand(j + 1, left - tj, coef * binom * std::pow(I0[j], q[j] - tj));
      }
      t[j] = 0;
    };
    expand(0, budget, 1.0);
  }

  NlsSetup out;
  out.P = std::move(P);
  auto& nf = out.nf;
  nf.grid = grid;
  nf.alive.assign(grid.size(), 1);
  nf.e = GridCoeff();
  nf.support = support;
  std::sort(nf.support.begin(), nf.support.end(), signlex_less);
  for (int j = 0; j < b; ++j) {
    std::vector<cplx> v(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
      v[i] = static_cast<double>(norm2(problem.sites[j])) + grid.points[i][j];
    nf.omega.emplace_back(std::move(v));
  }
  return out;
}

std::vector<GoodPoint> good_point_table(const MelnikovOptions& opt, const Problem& problem, const LatticeParams& lp,
                                        std::vector<std::string>* warnings) {
  std::vector<GoodPoint> out;
  if (problem.d < 2) return out;
  auto Ns = opt.N_list.empty() ? std::vector<std::int64_t>{opt.K} : opt.N_list;
  PowTerm Nmax{Rational(2), lp.tau1 / lp.tau0, opt.K};
  for (std::int64_t N : Ns) {
    if (N < opt.K || compare(Rational(N), Nmax) > 0) {
      if (warnings) warnings->push_back("N=" + std::to_string(N) + " outside [K, 2K^(tau1/tau0)], skipped");
      continue;
    }
    Ball ball = make_ball(N, problem);
    PowTerm plim{lp.c, lp.tau_max(problem.d), N};
    std::int64_t pmax = -1;
    while (compare(Rational(pmax + 1), plim) < 0) ++pmax;
    if (pmax < 0) continue;
    const double radius = std::ceil(default_radius(N, lp).to_double());
    for (int ell = 1; ell < problem.d; ++ell) {
      for (const auto& A : enumerate_subspaces(N, ell, pmax, problem)) {
        // A good point must clear both the radius and |v.x| >= T along a direction of length < C1 N.
        std::int64_t bound = opt.good_point_bound;
        if (bound <= 0) {
          double T = std::ceil(good_threshold(A.p[A.ell - 1], N, problem.d, lp).to_double());
          bound = static_cast<std::int64_t>(2 * radius + 2 * T * problem.C1 * N + 16);
        }
        auto g = choose_good_point(A, ball, bound, lp);
        if (!g) {
          if (warnings) warnings->push_back("no good point within bound for " + A.str() + " at N=" + std::to_string(N));
          continue;
        }
        out.push_back({N, A, *g});
      }
    }
  }
  return out;
}

MelnikovReport melnikov_check(const NormalForm& nf, std::size_t xi, const MelnikovOptions& opt,
                              const Problem& problem, const LatticeParams& lp, const std::vector<GoodPoint>* table) {
  MelnikovReport rep;
  const int b = problem.b, d = problem.d;
  const double K = static_cast<double>(opt.K);
  const double tau0 = to_double(lp.tau0), tau1 = to_double(lp.tau1);
  auto record = [&](const char* kind, const IntVec& k, std::string detail, double thr, double val) {
    bool pass = val > thr;
    if (!pass) {
      rep.pass = false;
      ++rep.n_fail;
    }
    if (!pass || opt.keep_passes) rep.records.push_back({kind, k, std::move(detail), thr, val, pass});
  };
  auto ks = enumerate_k(b, opt.K - 1);

  // i) |<omega,k> + h| > 2 gamma K^-tau0; only the nearest h can bind
  const double thr1 = 2 * opt.gamma * kpow(K, -tau0);
  for (const auto& k : ks) {
    if (is_zero_vec(k)) continue;
    double w = nf.eigenvalue(k, {}, xi);
    double h = -std::round(w);
    record("i", k, "h=" + std::to_string(static_cast<long long>(h)), thr1, std::abs(w + h));
  }
  // ii) l = +-e_m with m = -+pi(k)
  for (const auto& k : ks) {
    IntVec pk = pi_k(k, problem);
    for (int sgn : {1, -1}) {
      IntVec m = pk;
      if (sgn > 0)
        for (auto& x : m) x = -x;
      if (problem.is_site(m)) continue;
      std::vector<std::pair<IntVec, int>> l{{m, sgn}};
      record("ii", k, format_l(l), thr1, std::abs(nf.eigenvalue(k, l, xi)));
    }
  }
  // iii) |l| = 2 on the support
  const double thr3 = 2 * opt.gamma * kpow(K, -2.0 * d * tau1);
  std::set<IntVec> supp(nf.support.begin(), nf.support.end());
  PowTerm cap2{Rational(64), lp.tau1 * 2, opt.K};  // (8 K^tau1)^2
  for (const auto& k : ks) {
    IntVec pk = pi_k(k, problem);
    for (const auto& m : nf.support) {
      for (int sgn : {1, -1}) {
        // sgn (e_m + e_n): pi(k) + sgn (m + n) = 0
        IntVec n = add(IntVec(d, 0), add(pk, m, sgn), -sgn);
        if (!supp.count(n) || signlex_less(n, m)) continue;
        std::vector<std::pair<IntVec, int>> l;
        if (n == m)
          l = {{m, 2 * sgn}};
        else
          l = {{m, sgn}, {n, sgn}};
        record("iii", k, format_l(l), thr3, std::abs(nf.eigenvalue(k, l, xi)));
      }
      if (is_zero_vec(k)) continue;
      IntVec n = add(m, pk);  // e_m - e_n: pi(k) + m - n = 0
      if (!supp.count(n)) continue;
      if (compare(Rational(std::max(norm2(m), norm2(n))), cap2) > 0) continue;
      std::vector<std::pair<IntVec, int>> l{{m, 1}, {n, -1}};
      record("iii", k, format_l(l), thr3, std::abs(nf.eigenvalue(k, l, xi)));
    }
  }
  // iv) one good point per subspace
  std::vector<GoodPoint> local;
  if (!table) {
    local = good_point_table(opt, problem, lp, &rep.warnings);
    table = &local;
  }
  auto kiv = enumerate_k(b, opt.K);
  for (const auto& g : *table) {
    const double Nd = static_cast<double>(g.N);
    double thr = kpow(Nd, -2.0 * d * tau0);
    std::int64_t p = g.A.p.back();
    if (p != 0) thr = std::min(thr, std::pow(2.0, -4.0 * d) * std::pow(static_cast<double>(std::abs(p)), -2.0 * d));
    thr *= 2 * opt.gamma;
    for (const auto& k : kiv) {
      if (is_zero_vec(k)) continue;
      IntVec ng = add(g.mg, pi_k(k, problem));
      if (problem.is_site(ng)) continue;
      double val = std::abs(nf.eigenvalue(k, {}, xi) + nf.Omega_at(g.mg, xi) - nf.Omega_at(ng, xi));
      record("iv", k, "N=" + std::to_string(g.N) + " mg=" + format_vec(g.mg) + " ng=" + format_vec(ng), thr, val);
    }
  }
  return rep;
}

double AffineFamily::Omega_of(const IntVec& n) const {
  auto it = Omega.find(n);
  return it == Omega.end() ? static_cast<double>(norm2(n)) : it->second;
}

double AffineFamily::volume() const {
  double v = 1;
  for (auto [lo, hi] : box) v *= hi - lo;
  return v;
}

double AffineFamily::diameter() const {
  double s = 0;
  for (auto [lo, hi] : box) s += (hi - lo) * (hi - lo);
  return std::sqrt(s);
}

double ResonanceQuery::delta() const { return gamma * kpow(static_cast<double>(K), -rho); }

MeasureEstimate resonant_measure(const AffineFamily& fam, const ResonanceQuery& q, std::size_t samples,
                                 std::uint64_t seed) {
  const std::size_t b = fam.box.size();
  if (samples == 0) throw ValidationError("zero samples");
  if (b == 0 || fam.omega0.size() != b || q.k.size() != b) throw ValidationError("family and k dimensions differ");
  if (is_zero_vec(q.k) && q.l.empty() && (q.h == 0 || q.union_h)) throw ValidationError("(k, l) = 0 is excluded");
  for (auto [lo, hi] : fam.box)
    if (!(lo < hi)) throw ValidationError("degenerate parameter box");
  const double delta = q.delta();
  double c0 = 0;
  for (std::size_t j = 0; j < b; ++j) c0 += q.k[j] * fam.omega0[j];
  for (const auto& [n, e] : q.l) c0 += e * fam.Omega_of(n);
  if (!q.union_h) c0 += static_cast<double>(q.h);
  auto f = [&](const std::vector<double>& xi) {
    double v = c0;
    for (std::size_t j = 0; j < b; ++j) v += q.k[j] * xi[j];
    return v;
  };
  auto hit = [&](double v) {
    double dist = q.union_h ? std::abs(v - std::round(v)) : std::abs(v);
    return dist < delta;
  };

  MeasureEstimate out;
  out.samples = samples;
  std::mt19937_64 rng(seed);
  std::vector<std::uniform_real_distribution<double>> dist;
  for (auto [lo, hi] : fam.box) dist.emplace_back(lo, hi);
  std::size_t count = 0;
  std::vector<double> xi(b);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < b; ++j) xi[j] = dist[j](rng);
    if (hit(f(xi))) ++count;
  }
  const double vol = fam.volume();
  out.fraction = static_cast<double>(count) / samples;
  out.measure = out.fraction * vol;
  out.sigma = vol * std::sqrt(out.fraction * (1 - out.fraction) / samples);

  // range of f over the box (affine, so the corners suffice)
  double fmin = c0, fmax = c0;
  for (std::size_t j = 0; j < b; ++j) {
    double a = q.k[j] * fam.box[j].first, c = q.k[j] * fam.box[j].second;
    fmin += std::min(a, c);
    fmax += std::max(a, c);
  }
  if (is_zero_vec(q.k)) {
    double v = c0;
    out.bound = hit(v) ? vol : 0.0;
  } else {
    double hcount = 1;
    if (q.union_h) hcount = std::floor(fmax + delta) - std::ceil(fmin - delta) + 1;
    out.bound = 2 * delta * std::pow(fam.diameter(), static_cast<double>(b) - 1) * std::max(0.0, hcount);
  }

  if (b == 1) {
    const double lo = fam.box[0].first, hi = fam.box[0].second;
    const double kk = static_cast<double>(q.k[0]);
    if (kk == 0) {
      out.exact = hit(c0) ? hi - lo : 0.0;
    } else {
      std::vector<std::pair<double, double>> iv;
      auto add_iv = [&](double shift) {
        double a = (-delta - c0 - shift) / kk, c = (delta - c0 - shift) / kk;
        if (a > c) std::swap(a, c);
        a = std::max(a, lo);
        c = std::min(c, hi);
        if (a < c) iv.emplace_back(a, c);
      };
      if (q.union_h) {
        for (double h = std::ceil(-fmax - delta); h <= std::floor(-fmin + delta); ++h) add_iv(h);
      } else {
        add_iv(0);
      }
      std::sort(iv.begin(), iv.end());
      double total = 0, cur_lo = 0, cur_hi = -1e300;
      for (auto [a, c] : iv) {
        if (a > cur_hi) {
          if (cur_hi > cur_lo) total += cur_hi - cur_lo;
          cur_lo = a;
          cur_hi = c;
        } else {
          cur_hi = std::max(cur_hi, c);
        }
      }
      if (cur_hi > cur_lo) total += cur_hi - cur_lo;
      out.exact = total;
    }
  }
  return out;
}

ExcludedMeasure excluded_measure(const NormalForm& nf, const MelnikovOptions& opt, const Problem& problem,
                                 const LatticeParams& lp, int jobs) {
  ExcludedMeasure out;
  auto table = good_point_table(opt, problem, lp);
  MelnikovOptions o = opt;
  o.keep_passes = false;
  out.pass.assign(nf.grid.size(), 0);
  parallel_for(nf.grid.size(), jobs, [&](std::size_t i) {
    if (!nf.alive[i]) return;
    out.pass[i] = melnikov_check(nf, i, o, problem, lp, &table).pass ? 1 : 0;
  });
  for (std::size_t i = 0; i < nf.grid.size(); ++i) {
    if (!nf.alive[i]) continue;
    ++out.points;
    if (!out.pass[i]) ++out.failed;
  }
  out.fraction = out.points ? static_cast<double>(out.failed) / out.points : 0.0;

  // Union bound: each xi-dependent condition |f| < delta removes at most 2 delta D^{b-1} / |k|_2.
  const int b = problem.b, d = problem.d;
  const double K = static_cast<double>(opt.K);
  const double tau0 = to_double(lp.tau0), tau1 = to_double(lp.tau1);
  const double D = nf.grid.diameter();
  const double Db = std::pow(D > 0 ? D : 1.0, b - 1);
  const double thr1 = 2 * opt.gamma * kpow(K, -tau0), thr3 = 2 * opt.gamma * kpow(K, -2.0 * d * tau1);
  double total = 0;
  std::set<IntVec> supp(nf.support.begin(), nf.support.end());
  for (const auto& k : enumerate_k(b, opt.K - 1)) {
    if (is_zero_vec(k)) continue;
    const double w = 2 * Db / l2(k);
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < nf.grid.size(); ++i) {
      double v = nf.eigenvalue(k, {}, i);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    total += thr1 * w * std::max(0.0, std::floor(hi + thr1) - std::ceil(lo - thr1) + 1);
    IntVec pk = pi_k(k, problem);
    for (int sgn : {1, -1}) {
      IntVec m = pk;
      if (sgn > 0)
        for (auto& x : m) x = -x;
      if (!problem.is_site(m)) total += thr1 * w;
    }
    for (const auto& m : nf.support) {
      for (int sgn : {1, -1}) {
        IntVec n = add(IntVec(d, 0), add(pk, m, sgn), -sgn);
        if (supp.count(n) && !signlex_less(n, m)) total += thr3 * w;
      }
      if (supp.count(add(m, pk))) total += thr3 * w;
    }
  }
  for (const auto& g : table) {
    double thr = kpow(static_cast<double>(g.N), -2.0 * d * tau0);
    std::int64_t p = g.A.p.back();
    if (p != 0) thr = std::min(thr, std::pow(2.0, -4.0 * d) * std::pow(static_cast<double>(std::abs(p)), -2.0 * d));
    thr *= 2 * opt.gamma;
    for (const auto& k : enumerate_k(b, opt.K))
      if (!is_zero_vec(k)) total += thr * 2 * Db / l2(k);
  }
  const double vol = nf.grid.volume();
  out.bound = vol > 0 ? total / vol : std::numeric_limits<double>::infinity();
  out.constant = out.bound / (opt.gamma * kpow(K, -tau0 + b + d / 2.0));
  return out;
}

template <class C>
RParts<C> extract_R(const Series<C>& P) {
  RParts<C> out{Series<C>(P.b), Series<C>(P.b)};
  for (const auto& [m, c] : P.terms) {
    if (m.degree() > 2) continue;
    out.R.terms.emplace(m, c);
    if (m.kabs() == 0 && (is_action_linear(m) || is_diag_quadratic(m))) out.Ravg.terms.emplace(m, c);
  }
  return out;
}

Homological solve_homological(const NormalForm& nf, const GSeries& rhs, std::int64_t K, double gamma,
                              const Problem& problem, const LatticeParams& lp) {
  const std::size_t G = nf.grid.size();
  const double thr = gamma * kpow(static_cast<double>(K), -2.0 * problem.d * to_double(lp.tau1));
  Homological out;
  out.F = GSeries(rhs.b);
  out.min_divisor = std::numeric_limits<double>::infinity();
  std::set<IntVec> sites;
  for (const auto& [m, c] : rhs.terms) {
    if (m.kabs() == 0 && m.alpha == m.beta)
      throw ValidationError("homological right side has a k = 0 diagonal term " + m.str());
    GridCoeff f;
    f.v.assign(G, cplx{});
    for (std::size_t i = 0; i < G; ++i) {
      if (!nf.alive[i]) continue;
      double lam = nf.eigenvalue(m, i);
      out.min_divisor = std::min(out.min_divisor, std::abs(lam));
      if (std::abs(lam) < thr) {
        std::ostringstream os;
        os << "small divisor " << lam << " < gamma K^(-2 d tau1) = " << thr << " for " << m.str() << " at grid point "
           << i;
        throw NumericalError(os.str());
      }
      f.v[i] = c.at(i) / cplx(0, lam);
    }
    out.F.add(m, f);
    for (const auto* mi : {&m.alpha, &m.beta})
      for (const auto& [n, e] : *mi) sites.insert(n);
  }
  GSeries N = nf.as_series(rhs.b, std::vector<IntVec>(sites.begin(), sites.end()));
  GSeries res = poisson_bracket(N, out.F) - rhs;
  double num = 0, den = 0;
  for (const auto& [m, c] : res.terms) num = std::max(num, max_alive(c, nf.alive));
  for (const auto& [m, c] : rhs.terms) den = std::max(den, max_alive(c, nf.alive));
  out.residual = den > 0 ? num / den : num;
  if (rhs.empty()) out.min_divisor = 0;
  return out;
}

NormCtx Schedule::norm_ctx(double r, double s, const NormalForm& nf) const {
  NormCtx ctx;
  ctx.r = r;
  ctx.s = s;
  ctx.rho = rho;
  ctx.d = d;
  ctx.coeff = nf.coeff_ctx();
  return ctx;
}

double Schedule::s(int nu) const {
  double sum = 0;
  for (int i = 2; i <= nu + 1; ++i) sum += std::ldexp(1.0, -i);
  return s0 * (1 - sum);
}

Rational Schedule::drift(int nu) const {
  Rational sum = 0, term = 1;
  for (int i = 1; i <= nu; ++i) {
    term /= chi;
    sum += term;
  }
  return sum;
}

std::int64_t Schedule::K(int nu, double eps_nu) const {
  if (nu <= 0) return K0;
  double gap = s(nu - 1) - s(nu);
  double raw = eps_nu > 0 && eps_nu < 1 ? c / gap * std::log(1 / eps_nu) : static_cast<double>(K_cap);
  auto k = static_cast<std::int64_t>(std::ceil(std::min(raw, 1e15)));
  return std::clamp(k, K_min, K_cap);
}

double Schedule::predicted_eps(double eps_prev, std::int64_t K_prev) const {
  const double t0 = to_double(lp.tau0), t1 = to_double(lp.tau1);
  return c / (gamma * gamma) * kpow(static_cast<double>(K_prev), 3 * t1 * t1 / t0) * std::pow(eps_prev, 4.0 / 3.0);
}

bool Schedule::drift_budget_ok() const {
  if (!(chi > 1)) return false;
  Rational total = 1 / (chi - 1);
  return theta0 + total < lp.C && mu0 - total > lp.c;
}

StepResult kam_step(const KamState& st, const Schedule& sched, const StepOptions& opt, const Problem& problem,
                    const LatticeParams& lp) {
  StepResult out;
  auto& rep = out.report;
  rep.step = st.step;
  rep.eps_in = st.eps;
  rep.K = st.K;
  rep.grid = st.nf.grid.size();
  KamState next = st;
  next.step = st.step + 1;

  if (st.P.empty() || st.eps == 0) {
    next.s = sched.s(next.step);
    next.theta = sched.theta(next.step);
    next.mu = sched.mu(next.step);
    next.eps = 0;
    rep.alive = st.nf.n_alive();
    rep.r = next.r;
    rep.s = next.s;
    rep.theta = next.theta;
    rep.mu = next.mu;
    out.state = std::move(next);
    out.F = GSeries(problem.b);
    return out;
  }

  // Parameter-set shrink: drop grid points that fail the Melnikov conditions.
  MelnikovOptions mo;
  mo.K = st.K;
  mo.gamma = st.gamma;
  mo.N_list = opt.N_list;
  mo.good_point_bound = opt.good_point_bound;
  mo.keep_passes = false;
  auto table = good_point_table(mo, problem, lp, &rep.warnings);
  NormalForm& nf = next.nf;
  std::vector<char> ok(nf.grid.size(), 0);
  parallel_for(nf.grid.size(), opt.jobs, [&](std::size_t i) {
    if (nf.alive[i]) ok[i] = melnikov_check(nf, i, mo, problem, lp, &table).pass ? 1 : 0;
  });
  nf.alive = ok;
  rep.alive = nf.n_alive();
  if (rep.alive == 0) throw NumericalError("every grid point failed the Melnikov conditions at step " + std::to_string(st.step));

  // Smallness eps << (gamma^2 K^{-3 tau1^2/tau0} / 2)^3
  {
    const double t0 = to_double(lp.tau0), t1 = to_double(lp.tau1);
    double lim = 3 * (std::log(0.5 * st.gamma * st.gamma) - 3 * t1 * t1 / t0 * std::log(static_cast<double>(st.K)));
    if (std::log(st.eps) >= lim) {
      std::string msg = "smallness condition violated: log eps = " + std::to_string(std::log(st.eps)) +
                        " >= " + std::to_string(lim);
      if (lp.mode == Mode::paper) throw NumericalError(msg);
      rep.warnings.push_back(msg + " (desk mode)");
    }
  }

  auto parts = extract_R(st.P);
  GSeries B = project(parts.R, pred_le_K(st.K));
  GSeries avg(problem.b), constant(problem.b);
  for (const auto& [m, c] : B.terms) {
    if (is_constant(m)) constant.terms.emplace(m, c);
    else if (m.kabs() == 0 && (is_action_linear(m) || is_diag_quadratic(m))) avg.terms.emplace(m, c);
  }
  GSeries A = B - avg - constant;

  auto hom = solve_homological(nf, A, st.K, st.gamma, problem, lp);
  rep.homological_residual = hom.residual;
  rep.min_divisor = hom.min_divisor;
  out.F = hom.F;

  // e^{ad F} H = N + <R> + P_+ with P_+ = (P - B) + sum_{j>=1} [ad^j P / j! - ad^j A / (j+1)!]
  Trunc tr;
  tr.degree_max = opt.degree_max;
  GSeries Pp = st.P - B;
  GSeries TP = st.P, TA = A, last(problem.b);
  double dropped = 0;
  for (int j = 1; j <= opt.lie_order; ++j) {
    GSeries bp = poisson_bracket(hom.F, TP, tr);
    GSeries ba = poisson_bracket(hom.F, TA, tr);
    dropped += bp.dropped + ba.dropped;
    TP = scaled(bp, Rational(1, j));
    TA = scaled(ba, Rational(1, j));
    last = TP - scaled(TA, Rational(1, j + 1));
    Pp = Pp + last;
  }
  rep.dropped = dropped;

  // Absorb the real part of <R>; the imaginary residue stays in P_+.
  const std::size_t G = nf.grid.size();
  for (const auto& [m, c] : avg.terms) {
    GridCoeff re = full_vector(c, G), im = full_vector(c, G);
    for (std::size_t i = 0; i < G; ++i) {
      re.v[i] = c.at(i).real();
      im.v[i] = cplx(0, c.at(i).imag());
    }
    rep.imag_residue = std::max(rep.imag_residue, max_alive(im, nf.alive));
    Pp.add(m, im);
    if (is_action_linear(m)) {
      std::size_t j = 0;
      while (m.l[j] == 0) ++j;
      nf.omega[j] = full_vector(nf.omega[j], G) + re;
      rep.omega_shift = std::max(rep.omega_shift, max_alive(re, nf.alive));
    } else {
      const IntVec& n = m.alpha[0].first;
      auto it = nf.omega_tilde.find(n);
      nf.omega_tilde[n] = it == nf.omega_tilde.end() ? re : it->second + re;
    }
  }
  for (const auto& [m, c] : constant.terms) nf.e = nf.e + c;

  next.P = std::move(Pp);
  next.s = sched.s(next.step);
  next.r = 0.25 * std::cbrt(st.eps) * st.r;
  auto ctx = sched.norm_ctx(next.r, next.s, nf);
  next.eps = vector_field_norm(next.P, ctx);
  next.K = sched.K(next.step, next.eps);
  next.theta = sched.theta(next.step);
  next.mu = sched.mu(next.step);
  if (!(lp.c < next.theta && next.theta < lp.C && lp.c < next.mu && next.mu < lp.C))
    rep.warnings.push_back("theta/mu drift left (c, C) at step " + std::to_string(next.step));

  rep.eps_out = next.eps;
  rep.predicted_eps = sched.predicted_eps(st.eps, st.K);
  rep.eps_out_plain_exponent = sched.c / (st.gamma * st.gamma) *
                               kpow(static_cast<double>(st.K), 4.0 * problem.d * to_double(lp.tau1)) *
                               std::pow(st.eps, 4.0 / 3.0);
  rep.lie_tail = vector_field_norm(last, ctx);
  rep.norm_F = vector_field_norm(hom.F, sched.norm_ctx(st.r, st.s, nf));
  rep.r = next.r;
  rep.s = next.s;
  rep.theta = next.theta;
  rep.mu = next.mu;
  rep.terms = next.P.size();
  if (opt.qt_norm) {
    auto q = quasi_toeplitz_norm(next.P, next.theta, next.mu, default_N_list(next.K), {}, ctx, problem, lp);
    rep.qt_norm = q.value;
  }
  out.state = std::move(next);
  return out;
}

KamState initial_state(const NlsSetup& nls, const Schedule& sched) {
  KamState st;
  st.nf = nls.nf;
  st.P = nls.P;
  st.r = sched.r0;
  st.s = sched.s0;
  st.K = sched.K0;
  st.theta = sched.theta0;
  st.mu = sched.mu0;
  st.gamma = sched.gamma;
  st.eps = vector_field_norm(st.P, sched.norm_ctx(st.r, st.s, st.nf));
  return st;
}

IterationReport iterate(const KamState& init, const Schedule& sched, const StepOptions& opt, int max_steps,
                        const Problem& problem, const LatticeParams& lp) {
  IterationReport rep;
  KamState st = init;
  rep.eps.push_back(st.eps);
  rep.K.push_back(st.K);
  rep.stop_reason = "max_steps";
  for (int nu = 0; nu < max_steps; ++nu) {
    if (!(st.eps > 1e-300)) {
      rep.stop_reason = "eps underflow";
      break;
    }
    StepResult res;
    try {
      res = kam_step(st, sched, opt, problem, lp);
    } catch (const NumericalError& e) {
      throw NumericalError("step " + std::to_string(nu) + ": " + e.what());
    }
    rep.steps.push_back(res.report);
    rep.generators.push_back(std::move(res.F));
    st = std::move(res.state);
    rep.eps.push_back(st.eps);
    rep.K.push_back(st.K);
    for (int j = 0; j < problem.b; ++j)
      for (std::size_t i = 0; i < st.nf.grid.size(); ++i)
        if (st.nf.alive[i])
          rep.max_omega_drift =
              std::max(rep.max_omega_drift, std::abs(st.nf.omega_at(j, i) - init.nf.omega_at(j, i)));
  }
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i + 1 < rep.eps.size(); ++i) {
    double a = rep.eps[i], c = rep.eps[i + 1];
    rep.log_ratio.push_back(a > 0 && c > 0 && a != 1 ? std::log(c) / std::log(a) : 0.0);
    if (a > 0 && c > 0) {
      xs.push_back(std::log(a));
      ys.push_back(std::log(c));
    }
  }
  if (xs.size() >= 2) {
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    rep.fitted_exponent = sxx > 0 ? sxy / sxx : 0;
    rep.fitted_constant = std::exp(my - rep.fitted_exponent * mx);
  }
  rep.final_state = std::move(st);
  return rep;
}

DenominatorReport denominator_bound_check(const NormalForm& nf, std::size_t xi, const IntVec& k, const IntVec& m,
                                          std::int64_t K, double gamma, const CutParams& cp,
                                          const Problem& problem, const LatticeParams& lp) {
  if (l1(k) >= K) throw ValidationError("hypotheses unmet: |k| >= K");
  if (cp.N < K) throw ValidationError("hypotheses unmet: N < K");
  DenominatorReport rep;
  IntVec pk = pi_k(k, problem);
  rep.n = add(m, pk);
  PowTerm hi2{cp.theta * cp.theta, lp.tau1 * 2, cp.N};
  for (const IntVec* x : std::array<const IntVec*, 2>{&m, &rep.n})
    if (compare(Rational(norm2(*x)), hi2) < 0) throw ValidationError("hypotheses unmet: |" + format_vec(*x) + "| < theta N^tau1");
  auto cm = find_cut(m, cp, problem, lp), cn = find_cut(rep.n, cp, problem, lp);
  if (!cm || !cn || cm->ell != cn->ell || cm->ell == 0 || cm->ell == problem.d)
    throw ValidationError("hypotheses unmet: m and n lack a shared cut 0 < ell < d");
  rep.ell = cm->ell;

  GSeries Q(problem.b);
  for (const auto& [n, c] : nf.omega_tilde) Q.add(make_monomial(problem.b, {}, {}, {{n, 1}}, {{n, 1}}), c);
  NormCtx ctx;
  ctx.d = problem.d;
  ctx.coeff = nf.coeff_ctx();
  std::map<Presentation, GridCoeff> hat;
  if (!Q.empty()) hat = diagonal_decompose(Q, cp, ctx, problem, lp).Qhat;
  auto omega_hat = [&](const Presentation& A) {
    auto it = hat.find(A);
    return it == hat.end() ? 0.0 : it->second.at(xi).real();
  };
  double v = nf.eigenvalue(k, {}, xi) + static_cast<double>(norm2(m) - norm2(rep.n)) + omega_hat(cm->subspace) -
             omega_hat(cn->subspace);
  rep.value = std::abs(v);
  rep.in_span = span_membership(pk, cm->subspace.v);
  const double t0 = to_double(lp.tau0), t1 = to_double(lp.tau1);
  if (rep.in_span)
    rep.bound = gamma * kpow(static_cast<double>(K), -2.0 * problem.d * t1 * cp.tau / t0);
  else
    rep.bound = 0.5 * cp.Ntau.power(4 * problem.d).to_double();
  rep.pass = rep.value >= rep.bound;
  return rep;
}

template RParts<GridCoeff> extract_R(const GSeries&);
template RParts<ExactCoeff> extract_R(const XSeries&);

}  // namespace qtkam
