#include "qtkam/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

namespace qtkam {

using i128 = __int128;

int signlex_compare(const IntVec& a, const IntVec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("signlex_compare: length mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i] < 0 ? -a[i] : a[i];
    auto y = b[i] < 0 ? -b[i] : b[i];
    if (x != y) return x < y ? -1 : 1;
  }
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return a[i] > b[i] ? -1 : 1;
  return 0;
}

std::int64_t dot(const IntVec& a, const IntVec& b) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::int64_t norm2(const IntVec& a) { return dot(a, a); }

std::string format_vec(const IntVec& v) {
  std::string s = "(";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + ")";
}

IntVec parse_vec(const std::string& text) {
  IntVec out;
  std::string tok;
  std::stringstream ss(text);
  while (std::getline(ss, tok, ',')) {
    std::string t;
    for (char ch : tok)
      if (!std::isspace(static_cast<unsigned char>(ch)) && ch != '(' && ch != ')' && ch != '[' && ch != ']')
        t.push_back(ch);
    if (t.empty()) continue;
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(t, &used);
    } catch (const std::exception&) {
      throw ValidationError("not an integer vector: " + text);
    }
    if (used != t.size()) throw ValidationError("not an integer vector: " + text);
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("empty vector: " + text);
  return out;
}

Ball make_ball(std::int64_t N, const Problem& problem) {
  if (N < 1) throw ValidationError("N must be >= 1");
  Ball ball;
  ball.N = N;
  ball.d = problem.d;
  const std::int64_t R = problem.C1 * N;  // |x| < R
  const std::int64_t R2 = R * R;
  IntVec x(problem.d, -R);
  // Odometer over the cube [-R, R]^d.
  while (true) {
    auto n2 = norm2(x);
    if (n2 > 0 && n2 < R2) ball.vecs.push_back(x);
    int i = problem.d - 1;
    while (i >= 0 && x[i] == R) x[i--] = -R;
    if (i < 0) break;
    ++x[i];
  }
  std::sort(ball.vecs.begin(), ball.vecs.end(), signlex_less);
  return ball;
}

namespace {

std::int64_t gcd_vec(const IntVec& v) {
  std::int64_t g = 0;
  for (auto x : v) g = std::gcd(g, x < 0 ? -x : x);
  return g;
}

bool abs_less(const IntVec& a, const IntVec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i] < 0 ? -a[i] : a[i];
    auto y = b[i] < 0 ? -b[i] : b[i];
    if (x != y) return x < y;
  }
  return false;
}

int abs_cmp(const IntVec& a, const IntVec& b) {
  if (abs_less(a, b)) return -1;
  if (abs_less(b, a)) return 1;
  return 0;
}

IntVec negated(IntVec v) {
  for (auto& x : v) x = -x;
  return v;
}

}  // namespace

IntVec RankTracker::reduce(const IntVec& v0) const {
  std::vector<i128> v(v0.begin(), v0.end());
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    int c = pivots_[r];
    if (v[c] == 0) continue;
    i128 a = rows_[r][c], f = v[c];
    i128 g = 0;
    for (int j = 0; j < d_; ++j) {
      v[j] = v[j] * a - static_cast<i128>(rows_[r][j]) * f;
      i128 x = v[j] < 0 ? -v[j] : v[j];
      while (x) {
        i128 t = g % x;
        g = x;
        x = t;
      }
    }
    if (g > 1)
      for (auto& x : v) x /= g;
  }
  IntVec out(d_);
  for (int j = 0; j < d_; ++j) out[j] = static_cast<std::int64_t>(v[j]);
  return out;
}

bool RankTracker::independent(const IntVec& v) const {
  auto r = reduce(v);
  return std::any_of(r.begin(), r.end(), [](auto x) { return x != 0; });
}

bool RankTracker::add(const IntVec& v) {
  auto r = reduce(v);
  auto it = std::find_if(r.begin(), r.end(), [](auto x) { return x != 0; });
  if (it == r.end()) return false;
  auto g = gcd_vec(r);
  for (auto& x : r) x /= g;
  pivots_.push_back(static_cast<int>(it - r.begin()));
  rows_.push_back(std::move(r));
  return true;
}

int rank_of(const std::vector<IntVec>& vecs, int d) {
  RankTracker t(d);
  for (const auto& v : vecs) t.add(v);
  return t.rank();
}

bool span_membership(const IntVec& v, const std::vector<IntVec>& basis) {
  RankTracker t(static_cast<int>(v.size()));
  for (const auto& b : basis) t.add(b);
  return !t.independent(v);
}

Presentation Presentation::prefix(int j) const {
  Presentation out;
  out.ell = j;
  out.v.assign(v.begin(), v.begin() + j);
  out.p.assign(p.begin(), p.begin() + j);
  return out;
}

bool Presentation::contains(const IntVec& x) const {
  for (int i = 0; i < ell; ++i)
    if (dot(v[i], x) != p[i]) return false;
  return true;
}

IntVec Presentation::tuple() const {
  IntVec t(p.begin(), p.end());
  for (const auto& vi : v) t.insert(t.end(), vi.begin(), vi.end());
  return t;
}

std::string Presentation::str() const {
  std::string s = "[";
  for (int i = 0; i < ell; ++i) s += (i ? "," : "") + std::to_string(p[i]);
  s += ";";
  for (int i = 0; i < ell; ++i) s += (i ? "," : " ") + format_vec(v[i]);
  return s + "]_" + std::to_string(ell);
}

bool Presentation::operator<(const Presentation& o) const {
  if (ell != o.ell) return ell < o.ell;
  return signlex_compare(tuple(), o.tuple()) < 0;
}

namespace {

struct Weighted {
  IntVec v;
  std::int64_t w;
};

// Orientation with v.x0 >= 0; for v.x0 = 0 the sign-lex smaller of +-v.
IntVec orient(const IntVec& v, const IntVec& x0) {
  auto s = dot(v, x0);
  if (s < 0) return negated(v);
  if (s > 0) return v;
  auto n = negated(v);
  return signlex_less(v, n) ? v : n;
}

class PresentationSearch {
 public:
  PresentationSearch(std::vector<Weighted> W, std::vector<std::int64_t> g, const IntVec& x0, int d)
      : W_(std::move(W)), g_(std::move(g)), d_(d) {
    ell_ = static_cast<int>(g_.size());
    std::set<std::int64_t> weights(g_.begin(), g_.end());
    for (auto w : weights) {
      std::vector<IntVec> c;
      for (const auto& e : W_)
        if (e.w == w) c.push_back(orient(e.v, x0));
      std::sort(c.begin(), c.end(), signlex_less);
      c.erase(std::unique(c.begin(), c.end()), c.end());
      cands_[w] = std::move(c);
    }
  }

  std::vector<IntVec> run() {
    std::vector<IntVec> cur;
    RankTracker t(d_);
    dfs(0, t, cur, true);
    return best_;
  }

 private:
  // Greedy completion must reproduce exactly the remaining minimal weights.
  bool feasible(const RankTracker& t, int from) const {
    if (from == ell_) return true;
    RankTracker tt = t;
    int i = from;
    for (const auto& e : W_) {
      if (e.w > g_[i]) return false;
      if (tt.add(e.v)) {
        if (e.w != g_[i]) return false;
        if (++i == ell_) return true;
      }
    }
    return false;
  }

  void dfs(int level, const RankTracker& t, std::vector<IntVec>& cur, bool prefix_eq) {
    if (level == ell_) {
      if (best_.empty() || better(cur)) best_ = cur;
      return;
    }
    for (const auto& c : cands_.at(g_[level])) {
      bool child_eq = false;
      if (!best_.empty() && prefix_eq) {
        int cmp = abs_cmp(c, best_[level]);
        if (cmp > 0) break;
        child_eq = cmp == 0;
      }
      if (!t.independent(c)) continue;
      RankTracker nt = t;
      nt.add(c);
      if (!feasible(nt, level + 1)) continue;
      cur.push_back(c);
      dfs(level + 1, nt, cur, best_.empty() ? true : child_eq);
      cur.pop_back();
    }
  }

  bool better(const std::vector<IntVec>& cand) const {
    IntVec a, b;
    for (const auto& v : cand) a.insert(a.end(), v.begin(), v.end());
    for (const auto& v : best_) b.insert(b.end(), v.begin(), v.end());
    return signlex_compare(a, b) < 0;
  }

  std::vector<Weighted> W_;
  std::vector<std::int64_t> g_;
  int d_, ell_;
  std::map<std::int64_t, std::vector<IntVec>> cands_;
  std::vector<IntVec> best_;
};

}  // namespace

std::optional<Presentation> optimal_presentation(const AffineSpec& A, const Ball& ball) {
  const int d = ball.d;
  if (static_cast<int>(A.offset.size()) != d) throw ValidationError("offset dimension mismatch");
  for (const auto& u : A.dirs)
    if (static_cast<int>(u.size()) != d) throw ValidationError("direction dimension mismatch");
  const int ell = d - rank_of(A.dirs, d);
  Presentation out;
  out.ell = ell;
  if (ell == 0) return out;

  std::vector<Weighted> W;
  for (const auto& v : ball.vecs) {
    bool ortho = std::all_of(A.dirs.begin(), A.dirs.end(), [&](const IntVec& u) { return dot(v, u) == 0; });
    if (!ortho) continue;
    auto s = dot(v, A.offset);
    W.push_back({v, s < 0 ? -s : s});
  }
  std::stable_sort(W.begin(), W.end(), [](const Weighted& a, const Weighted& b) { return a.w < b.w; });

  RankTracker t(d);
  std::vector<std::int64_t> g;
  for (const auto& e : W)
    if (t.add(e.v)) {
      g.push_back(e.w);
      if (static_cast<int>(g.size()) == ell) break;
    }
  if (static_cast<int>(g.size()) < ell) return std::nullopt;

  PresentationSearch search(W, g, A.offset, d);
  out.v = search.run();
  out.p = g;
  return out;
}

std::optional<Presentation> optimal_presentation(const IntVec& point, const Ball& ball) {
  return optimal_presentation(AffineSpec{point, {}}, ball);
}

std::optional<std::int64_t> needed_N(const AffineSpec& A, std::int64_t N, const Problem& problem,
                                     std::int64_t max_N) {
  for (std::int64_t n = std::max<std::int64_t>(N, 1); n <= max_N; ++n) {
    auto ball = make_ball(n, problem);
    std::vector<IntVec> W;
    for (const auto& v : ball.vecs)
      if (std::all_of(A.dirs.begin(), A.dirs.end(), [&](const IntVec& u) { return dot(v, u) == 0; }))
        W.push_back(v);
    if (rank_of(W, problem.d) == problem.d - rank_of(A.dirs, problem.d)) return n;
  }
  return std::nullopt;
}

const Presentation& PresentationCache::get(const IntVec& point) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = memo_.find(point);
    if (it != memo_.end()) return it->second;
  }
  auto pres = optimal_presentation(point, ball_);
  if (!pres) throw std::runtime_error("no presentation for " + format_vec(point));
  std::lock_guard<std::mutex> lock(mu_);
  return memo_.emplace(point, std::move(*pres)).first->second;
}

std::optional<Cut> find_cut(const IntVec& m, const Presentation& full, const CutParams& cp, const Problem& problem) {
  const int d = problem.d;
  PowTerm lowT = cp.mu_N_tau();
  PowTerm highT = cp.theta_N_4dtau(d);
  for (int ell = 0; ell <= d; ++ell) {
    bool low_ok = ell == 0 || compare(Rational(full.p[ell - 1]), lowT) < 0;
    bool high_ok = ell == d || compare(Rational(full.p[ell]), highT) > 0;
    if (low_ok && high_ok) return Cut{ell, full.prefix(ell), full, cp};
  }
  (void)m;
  return std::nullopt;
}

std::optional<Cut> find_cut(const IntVec& m, const CutParams& cp, const Problem& problem, const LatticeParams&) {
  if (static_cast<int>(m.size()) != problem.d) throw ValidationError("point dimension mismatch");
  if (problem.is_site(m)) throw ValidationError("point " + format_vec(m) + " is a tangential site");
  auto pres = optimal_presentation(m, make_ball(cp.N, problem));
  if (!pres) throw ValidationError("no optimal presentation at this N (C1 N too small)");
  return find_cut(m, *pres, cp, problem);
}

std::vector<PowTerm> standard_thresholds(std::int64_t N, int d, const LatticeParams& lp) {
  std::vector<PowTerm> T;
  T.push_back(PowTerm{lp.C, lp.tau0 * (4 * d), N});
  Rational k = lp.C * rpow(lp.c, -4 * d);
  for (int i = 1; i < d; ++i) {
    const auto& prev = T.back();
    T.push_back(PowTerm{k * rpow(prev.coef, 4 * d), prev.exp * (4 * d), N});
  }
  return T;
}

StandardCut standard_cut_levels(const std::vector<BigInt>& p, std::int64_t N, int d, const LatticeParams& lp) {
  if (static_cast<int>(p.size()) != d) throw ValidationError("standard_cut needs d levels");
  const double lnN = std::log(static_cast<double>(N));
  StandardCut sc;
  PowTerm top{lp.c, lp.tau_max(d), N};
  if (compare(Rational(p[d - 1]), top) <= 0) {
    sc.ell = d;
    sc.index = d;
    sc.Ntau = PowTerm{Rational(1), lp.tau_max(d), N};
    sc.tau = to_double(lp.tau_max(d));
    return sc;
  }
  auto T = standard_thresholds(N, d, lp);
  if (compare(Rational(p[0]), T[0]) >= 0) {
    sc.ell = 0;
    sc.index = 0;
    sc.Ntau = PowTerm{Rational(1), lp.tau0, N};
    sc.tau = to_double(lp.tau0);
    return sc;
  }
  int ibar = -1;
  for (int i = 1; i <= d - 1 && ibar < 0; ++i) {
    bool empty = true;
    for (int j = 1; j < d - 1; ++j) {  // p_2 .. p_{d-1}
      Rational pj(p[j]);
      if (compare(pj, T[i - 1]) > 0 && compare(pj, T[i]) < 0) empty = false;
    }
    if (empty) ibar = i;
  }
  sc.certified = ibar > 0;
  if (ibar < 0) ibar = d - 1;
  int ell = 0;
  for (int j = 0; j < d; ++j)
    if (compare(Rational(p[j]), T[ibar - 1]) <= 0) ell = j + 1;
  sc.ell = ell;
  sc.index = ibar;
  sc.Ntau = T[ibar - 1].scaled(1 / lp.c);
  sc.tau = sc.Ntau.log_value() / lnN;
  if (ell >= d || compare(Rational(p[ell]), T[ibar]) < 0) sc.certified = false;
  return sc;
}

StandardCut standard_cut(const IntVec& m, std::int64_t N, const Problem& problem, const LatticeParams& lp) {
  auto pres = optimal_presentation(m, make_ball(N, problem));
  if (!pres) throw ValidationError("no optimal presentation at this N");
  std::vector<BigInt> p(pres->p.begin(), pres->p.end());
  return standard_cut_levels(p, N, problem.d, lp);
}

PowTerm tau_of_p(std::int64_t p, std::int64_t N, const LatticeParams& lp) {
  PowTerm base{Rational(1), lp.tau0, N};
  if (p <= 0) return base;
  return max(base, PowTerm{Rational(p) / lp.c, Rational(0), N});
}

PowTerm default_radius(std::int64_t N, const LatticeParams& lp) { return PowTerm{Rational(1), lp.tau1, N}; }

PowTerm good_threshold(std::int64_t p_ell, std::int64_t N, int d, const LatticeParams& lp) {
  PowTerm a{lp.C, lp.tau0 * (4 * d), N};
  if (p_ell <= 0) return a;
  PowTerm b{lp.C * rpow(lp.c, -4 * d) * rpow(Rational(p_ell), 4 * d), Rational(0), N};
  return max(a, b);
}

namespace {

std::vector<IntVec> outside_span(const Presentation& A, const Ball& ball) {
  RankTracker t(ball.d);
  for (const auto& v : A.v) t.add(v);
  std::vector<IntVec> out;
  for (const auto& v : ball.vecs)
    if (t.independent(v)) out.push_back(v);
  return out;
}

void check_portion_pre(const Presentation& A, std::int64_t N, int d, const LatticeParams& lp) {
  if (A.ell < 1) throw ValidationError("good portions need ell >= 1");
  PowTerm lim{lp.c, lp.tau_max(d), N};
  if (compare(Rational(A.p[A.ell - 1]), lim) > 0) throw ValidationError("p_ell exceeds c N^(tau1/4d)");
}

}  // namespace

bool good_portion_contains(const Presentation& A, const IntVec& x, const Ball& ball, const LatticeParams& lp,
                           const std::optional<PowTerm>& radius) {
  const int d = ball.d;
  check_portion_pre(A, ball.N, d, lp);
  if (!A.contains(x)) throw ValidationError("point " + format_vec(x) + " is not on " + A.str());
  PowTerm R = radius ? *radius : default_radius(ball.N, lp);
  if (compare(Rational(norm2(x)), R.power(2)) <= 0) return false;
  IntThreshold T(good_threshold(A.p[A.ell - 1], ball.N, d, lp));
  for (const auto& v : outside_span(A, ball)) {
    auto s = dot(v, x);
    if (!T.ge(s < 0 ? -s : s)) return false;
  }
  return true;
}

// Column-style Hermite reduction: V U = [H | 0] with U unimodular.
std::optional<LatticeParam> integer_solutions(const Presentation& A, int d) {
  const int ell = A.ell;
  std::vector<std::vector<BigInt>> M(ell, std::vector<BigInt>(d));
  for (int i = 0; i < ell; ++i)
    for (int j = 0; j < d; ++j) M[i][j] = A.v[i][j];
  std::vector<std::vector<BigInt>> U(d, std::vector<BigInt>(d, 0));
  for (int j = 0; j < d; ++j) U[j][j] = 1;
  auto colop = [&](int a, int b, const BigInt& s, const BigInt& t, const BigInt& u, const BigInt& w) {
    // col a <- s a + t b ; col b <- u a + w b
    for (int i = 0; i < ell; ++i) {
      BigInt xa = M[i][a], xb = M[i][b];
      M[i][a] = s * xa + t * xb;
      M[i][b] = u * xa + w * xb;
    }
    for (int i = 0; i < d; ++i) {
      BigInt xa = U[i][a], xb = U[i][b];
      U[i][a] = s * xa + t * xb;
      U[i][b] = u * xa + w * xb;
    }
  };
  int r = 0;
  std::vector<int> pivot_row;
  for (int i = 0; i < ell && r < d; ++i) {
    for (int j = r + 1; j < d; ++j) {
      if (M[i][j] == 0) continue;
      BigInt x = M[i][r], y = M[i][j];
      // extended gcd
      BigInt old_r = x, rr = y, old_s = 1, s = 0, old_t = 0, t = 1;
      while (rr != 0) {
        BigInt q = old_r / rr;
        BigInt tmp = old_r - q * rr;
        old_r = rr;
        rr = tmp;
        tmp = old_s - q * s;
        old_s = s;
        s = tmp;
        tmp = old_t - q * t;
        old_t = t;
        t = tmp;
      }
      BigInt g = old_r;
      if (g < 0) {
        g = -g;
        old_s = -old_s;
        old_t = -old_t;
      }
      colop(r, j, old_s, old_t, -y / g, x / g);
    }
    if (M[i][r] != 0) {
      pivot_row.push_back(i);
      ++r;
    }
  }
  // Solve H y = p by forward substitution over pivot rows; check the rest.
  std::vector<BigInt> y(d, 0);
  int col = 0;
  for (int i = 0; i < ell; ++i) {
    BigInt acc = A.p[i];
    bool is_pivot = col < r && pivot_row[col] == i;
    int upto = is_pivot ? col : r;
    for (int c = 0; c < upto; ++c) acc -= M[i][c] * y[c];
    if (is_pivot) {
      if (acc % M[i][col] != 0) return std::nullopt;
      y[col] = acc / M[i][col];
      ++col;
    } else if (acc != 0) {
      return std::nullopt;
    }
  }
  LatticeParam out;
  out.particular.assign(d, 0);
  for (int i = 0; i < d; ++i) {
    BigInt s = 0;
    for (int c = 0; c < r; ++c) s += U[i][c] * y[c];
    out.particular[i] = s.convert_to<std::int64_t>();
  }
  for (int c = r; c < d; ++c) {
    IntVec u(d);
    for (int i = 0; i < d; ++i) u[i] = U[i][c].convert_to<std::int64_t>();
    out.basis.push_back(u);
  }
  return out;
}

namespace {

i128 floor_div(i128 a, i128 b) {
  i128 q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
i128 ceil_div(i128 a, i128 b) { return -floor_div(-a, b); }

struct Interval {
  std::int64_t lo, hi;
};

// Integer t with A t^2 + B t + C0 <= F (A > 0), as one interval.
std::optional<Interval> quad_le(i128 A, i128 B, i128 C0, i128 F) {
  auto q = [&](i128 t) { return A * t * t + B * t + C0; };
  long double center = -static_cast<long double>(B) / (2.0L * static_cast<long double>(A));
  long double disc = static_cast<long double>(B) * B - 4.0L * A * (static_cast<long double>(C0) - F);
  i128 c = static_cast<i128>(std::floor(center));
  i128 best = q(c) <= q(c + 1) ? c : c + 1;
  if (q(best) > F) return std::nullopt;
  long double half = disc > 0 ? std::sqrt(disc) / (2.0L * A) : 0;
  i128 lo = static_cast<i128>(std::floor(center - half)) , hi = static_cast<i128>(std::ceil(center + half));
  if (lo > best) lo = best;
  if (hi < best) hi = best;
  while (q(lo) > F) ++lo;
  while (q(lo - 1) <= F) --lo;
  while (q(hi) > F) --hi;
  while (q(hi + 1) <= F) ++hi;
  return Interval{static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)};
}

bool in_box_norm(const IntVec& x, std::int64_t bound) { return static_cast<i128>(norm2(x)) <= static_cast<i128>(bound) * bound; }

std::optional<IntVec> good_point_line(const Presentation& A, const LatticeParam& lpar, const Ball& ball,
                                      std::int64_t bound, const PowTerm& R, const IntThreshold& T) {
  const int d = ball.d;
  IntVec u = lpar.basis[0];
  IntVec x0 = lpar.particular;
  // Recentre the anchor near the origin.
  {
    long double tc = -static_cast<long double>(dot(x0, u)) / static_cast<long double>(norm2(u));
    auto sh = static_cast<std::int64_t>(std::llround(tc));
    for (int i = 0; i < d; ++i) x0[i] += sh * u[i];
  }
  auto at = [&](std::int64_t t) {
    IntVec x(d);
    for (int i = 0; i < d; ++i) x[i] = x0[i] + t * u[i];
    return x;
  };
  i128 QA = norm2(u), QB = 2 * static_cast<i128>(dot(x0, u)), QC = norm2(x0);
  auto box = quad_le(QA, QB, QC, static_cast<i128>(bound) * bound);
  if (!box) return std::nullopt;
  std::vector<Interval> forbidden;
  IntThreshold R2(R.power(2));
  if (R2.huge) return std::nullopt;
  if (auto disk = quad_le(QA, QB, QC, R2.fl)) forbidden.push_back(*disk);
  if (T.huge) return std::nullopt;
  const i128 M = static_cast<i128>(T.ce) - 1;
  if (M >= 0) {
    for (const auto& v : outside_span(A, ball)) {
      i128 a = dot(v, u), b = dot(v, x0);
      if (a == 0) continue;  // cannot happen for v outside the span
      if (a < 0) {
        a = -a;
        b = -b;
      }
      i128 lo = ceil_div(-M - b, a), hi = floor_div(M - b, a);
      if (lo <= hi) forbidden.push_back({static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)});
    }
  }
  auto walk = [&](std::int64_t t, int dir) -> std::optional<std::int64_t> {
    while (true) {
      if (dir > 0 && t < box->lo) t = box->lo;
      if (dir < 0 && t > box->hi) t = box->hi;
      if (t < box->lo || t > box->hi) return std::nullopt;
      bool moved = false;
      for (const auto& f : forbidden)
        if (f.lo <= t && t <= f.hi) {
          t = dir > 0 ? f.hi + 1 : f.lo - 1;
          moved = true;
        }
      if (!moved) return t;
    }
  };
  int j = 0;
  while (u[j] == 0) ++j;
  // |x_j(t)| is unimodal around t* = -x0_j/u_j; the minimum sits next to it.
  i128 num = -x0[j], den = u[j];
  if (den < 0) {
    num = -num;
    den = -den;
  }
  std::int64_t right0 = static_cast<std::int64_t>(ceil_div(num, den));
  std::int64_t left0 = static_cast<std::int64_t>(floor_div(num, den));
  std::optional<IntVec> best;
  for (auto cand : {walk(right0, +1), walk(left0, -1)}) {
    if (!cand) continue;
    IntVec x = at(*cand);
    if (!in_box_norm(x, bound)) continue;
    if (!best || signlex_less(x, *best)) best = x;
  }
  return best;
}

}  // namespace

std::optional<IntVec> choose_good_point(const Presentation& A, const Ball& ball, std::int64_t bound,
                                        const LatticeParams& lp, const std::optional<PowTerm>& radius) {
  const int d = ball.d;
  check_portion_pre(A, ball.N, d, lp);
  auto lpar = integer_solutions(A, d);
  if (!lpar) return std::nullopt;
  PowTerm R = radius ? *radius : default_radius(ball.N, lp);
  IntThreshold T(good_threshold(A.p[A.ell - 1], ball.N, d, lp));
  if (lpar->basis.size() == 1) return good_point_line(A, *lpar, ball, bound, R, T);

  // Higher-dimensional portions: exhaustive scan of the cube.
  double cells = std::pow(2.0 * bound + 1.0, d);
  if (cells > 5e7) throw ValidationError("choose_good_point: search box too large for a brute scan");
  std::optional<IntVec> best;
  IntVec x(d, -bound);
  while (true) {
    if (in_box_norm(x, bound) && A.contains(x) && good_portion_contains(A, x, ball, lp, R))
      if (!best || signlex_less(x, *best)) best = x;
    int i = d - 1;
    while (i >= 0 && x[i] == bound) x[i--] = -bound;
    if (i < 0) break;
    ++x[i];
  }
  (void)T;
  return best;
}

std::string to_string(PointClass c) {
  switch (c) {
    case PointClass::a0: return "A0";
    case PointClass::portion: return "portion";
    case PointClass::core: return "core";
    case PointClass::uncovered: return "uncovered";
    case PointClass::site: return "site";
  }
  return "?";
}

Box Box::parse(const std::string& text) {
  Box b;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto colon = part.find(':');
    if (colon == std::string::npos) throw ValidationError("box range must be lo:hi, got " + part);
    try {
      auto lo = std::stoll(part.substr(0, colon)), hi = std::stoll(part.substr(colon + 1));
      if (lo > hi) throw ValidationError("box range with lo > hi: " + part);
      b.ranges.push_back({lo, hi});
    } catch (const std::logic_error&) {
      throw ValidationError("malformed box range: " + part);
    }
  }
  if (b.ranges.empty()) throw ValidationError("empty box");
  return b;
}

std::size_t Box::count() const {
  std::size_t n = 1;
  for (auto [lo, hi] : ranges) n *= static_cast<std::size_t>(hi - lo + 1);
  return n;
}

Decomposition decompose_region(const Box& box, std::int64_t N, const Problem& problem, const LatticeParams& lp,
                               const std::optional<PowTerm>& radius, int jobs) {
  const int d = problem.d;
  if (static_cast<int>(box.ranges.size()) != d) throw ValidationError("box dimension mismatch");
  Ball ball = make_ball(N, problem);
  Decomposition dec;
  dec.N = N;
  dec.radius = radius ? *radius : default_radius(N, lp);
  const std::size_t total = box.count();
  dec.points.resize(total);
  dec.cls.resize(total);
  dec.portion_id.assign(total, -1);

  IntThreshold a0T(PowTerm{lp.C, lp.tau0 * (4 * d), N});
  IntThreshold R2(dec.radius.power(2));
  IntThreshold plim(PowTerm{lp.c, lp.tau_max(d), N});

  struct Hit {
    std::size_t idx;
    Presentation A;
  };
  std::vector<std::vector<Hit>> hits(std::max(jobs, 1));
  std::vector<std::size_t> multi(std::max(jobs, 1), 0);

  auto work = [&](int w, std::size_t begin, std::size_t end) {
    std::map<Presentation, std::vector<IntVec>> outside_memo;
    for (std::size_t idx = begin; idx < end; ++idx) {
      IntVec m(d);
      std::size_t rem = idx;
      for (int a = d - 1; a >= 0; --a) {
        auto span = static_cast<std::size_t>(box.ranges[a].second - box.ranges[a].first + 1);
        m[a] = box.ranges[a].first + static_cast<std::int64_t>(rem % span);
        rem /= span;
      }
      dec.points[idx] = m;
      if (problem.is_site(m)) {
        dec.cls[idx] = PointClass::site;
        continue;
      }
      auto pres = optimal_presentation(m, ball);
      if (!pres) throw ValidationError("no optimal presentation; increase N");
      if (a0T.gt(pres->p[0])) {
        dec.cls[idx] = PointClass::a0;
        continue;
      }
      if (R2.le(norm2(m))) {
        dec.cls[idx] = PointClass::core;
        continue;
      }
      int found = 0;
      for (int ell = 1; ell < d; ++ell) {
        if (!plim.le(pres->p[ell - 1])) break;
        Presentation A = pres->prefix(ell);
        auto it = outside_memo.find(A);
        if (it == outside_memo.end()) it = outside_memo.emplace(A, outside_span(A, ball)).first;
        IntThreshold T(good_threshold(A.p[ell - 1], N, d, lp));
        bool good = std::all_of(it->second.begin(), it->second.end(), [&](const IntVec& v) {
          auto s = dot(v, m);
          return T.ge(s < 0 ? -s : s);
        });
        if (!good) continue;
        if (found++ == 0) hits[w].push_back({idx, A});
      }
      if (found > 1) ++multi[w];
      dec.cls[idx] = found ? PointClass::portion : PointClass::uncovered;
    }
  };

  const int nw = std::max(jobs, 1);
  if (nw == 1) {
    work(0, 0, total);
  } else {
    std::vector<std::thread> threads;
    std::size_t chunk = (total + nw - 1) / nw;
    for (int w = 0; w < nw; ++w) {
      std::size_t b = std::min(total, w * chunk), e = std::min(total, b + chunk);
      threads.emplace_back(work, w, b, e);
    }
    for (auto& t : threads) t.join();
  }

  std::map<Presentation, int> ids;
  for (auto& hv : hits)
    for (auto& h : hv) {
      auto it = ids.find(h.A);
      if (it == ids.end()) {
        it = ids.emplace(h.A, static_cast<int>(dec.portions.size())).first;
        dec.portions.push_back(h.A);
      }
      dec.portion_id[h.idx] = it->second;
    }
  for (auto c : dec.cls) {
    if (c == PointClass::a0) ++dec.n_a0;
    if (c == PointClass::portion) ++dec.n_portion;
    if (c == PointClass::core) ++dec.n_core;
    if (c == PointClass::uncovered) ++dec.n_uncovered;
  }
  for (auto m : multi) dec.n_multi += m;
  return dec;
}

std::string decomposition_csv(const Decomposition& dec) {
  std::ostringstream os;
  const int d = dec.points.empty() ? 0 : static_cast<int>(dec.points[0].size());
  for (int i = 0; i < d; ++i) os << "m" << (i + 1) << ",";
  os << "class,presentation_id\n";
  for (std::size_t i = 0; i < dec.points.size(); ++i) {
    for (auto x : dec.points[i]) os << x << ",";
    os << to_string(dec.cls[i]) << "," << dec.portion_id[i] << "\n";
  }
  return os.str();
}

std::string decomposition_svg(const Decomposition& dec) {
  if (dec.points.empty() || dec.points[0].size() != 2) throw ValidationError("SVG export needs d = 2");
  std::int64_t xlo = dec.points.front()[0], xhi = xlo, ylo = dec.points.front()[1], yhi = ylo;
  for (const auto& p : dec.points) {
    xlo = std::min(xlo, p[0]);
    xhi = std::max(xhi, p[0]);
    ylo = std::min(ylo, p[1]);
    yhi = std::max(yhi, p[1]);
  }
  const double size = 800, w = static_cast<double>(xhi - xlo + 1), h = static_cast<double>(yhi - ylo + 1);
  const double sc = size / std::max(w, h);
  auto X = [&](double x) { return (x - xlo + 0.5) * sc; };
  auto Y = [&](double y) { return (yhi - y + 0.5) * sc; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w * sc << "\" height=\"" << h * sc << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#eef3fb\"/>\n";
  double rr = dec.radius.to_double() * sc;
  if (std::isfinite(rr))
    os << "<circle cx=\"" << X(0) << "\" cy=\"" << Y(0) << "\" r=\"" << rr
       << "\" fill=\"#f4f4f4\" stroke=\"#999\"/>\n";
  for (const auto& A : dec.portions) {
    if (A.ell != 1) continue;
    const auto& v = A.v[0];
    double a = v[0], b = v[1], p = static_cast<double>(A.p[0]);
    double x1, y1, x2, y2;
    if (std::abs(b) >= std::abs(a)) {
      x1 = xlo;
      x2 = xhi;
      y1 = (p - a * x1) / b;
      y2 = (p - a * x2) / b;
    } else {
      y1 = ylo;
      y2 = yhi;
      x1 = (p - b * y1) / a;
      x2 = (p - b * y2) / a;
    }
    os << "<line x1=\"" << X(x1) << "\" y1=\"" << Y(y1) << "\" x2=\"" << X(x2) << "\" y2=\"" << Y(y2)
       << "\" stroke=\"#555\" stroke-dasharray=\"4,3\" stroke-width=\"0.6\"/>\n";
  }
  const double dot_size = std::max(sc, 1.2);
  std::size_t drawn = 0;
  for (std::size_t i = 0; i < dec.points.size() && drawn < 200000; ++i) {
    const char* col = nullptr;
    if (dec.cls[i] == PointClass::portion) col = "#000";
    if (dec.cls[i] == PointClass::uncovered) col = "#d00";
    if (dec.cls[i] == PointClass::site) col = "#080";
    if (!col) continue;
    ++drawn;
    os << "<rect x=\"" << X(dec.points[i][0]) - dot_size / 2 << "\" y=\"" << Y(dec.points[i][1]) - dot_size / 2
       << "\" width=\"" << dot_size << "\" height=\"" << dot_size << "\" fill=\"" << col << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

BigInt count_subspaces_bound(std::int64_t N, int ell, std::int64_t p, const Problem& problem) {
  if (ell < 1 || p < 0) throw ValidationError("count bound needs ell >= 1, p >= 0");
  return ipow(BigInt(2 * problem.C1 * N), static_cast<std::uint64_t>(ell * problem.d)) *
         ipow(BigInt(2 * p), static_cast<std::uint64_t>(ell));
}

namespace {

// Reduced row echelon form of [V | q] over Q, as a canonical key.
std::string affine_key(const std::vector<IntVec>& V, const IntVec& q, int d) {
  const int rows = static_cast<int>(V.size());
  std::vector<std::vector<Rational>> M(rows, std::vector<Rational>(d + 1));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < d; ++j) M[i][j] = V[i][j];
    M[i][d] = q[i];
  }
  int r = 0;
  for (int c = 0; c < d && r < rows; ++c) {
    int piv = -1;
    for (int i = r; i < rows; ++i)
      if (M[i][c] != 0) {
        piv = i;
        break;
      }
    if (piv < 0) continue;
    std::swap(M[r], M[piv]);
    Rational f = M[r][c];
    for (auto& x : M[r]) x /= f;
    for (int i = 0; i < rows; ++i)
      if (i != r && M[i][c] != 0) {
        Rational g = M[i][c];
        for (int j = 0; j <= d; ++j) M[i][j] -= g * M[r][j];
      }
    ++r;
  }
  std::string key;
  for (const auto& row : M)
    for (const auto& x : row) key += to_string(x) + " ";
  return key;
}

}  // namespace

std::vector<Presentation> enumerate_subspaces(std::int64_t N, int ell, std::int64_t p, const Problem& problem) {
  const int d = problem.d;
  if (ell < 1 || ell > d) throw ValidationError("ell out of range");
  Ball ball = make_ball(N, problem);
  std::vector<IntVec> prim;
  for (const auto& v : ball.vecs)
    if (gcd_vec(v) == 1) prim.push_back(v);
  std::set<std::string> seen;
  std::set<Presentation> out;
  std::vector<int> idx(ell);
  // Choose ell primitive vectors in increasing index order and levels in [0, p].
  std::function<void(int, int)> rec = [&](int pos, int start) {
    if (pos == ell) {
      std::vector<IntVec> V;
      for (int i : idx) V.push_back(prim[i]);
      if (rank_of(V, d) < ell) return;
      IntVec q(ell, 0);
      while (true) {
        auto key = affine_key(V, q, d);
        if (seen.insert(key).second) {
          Presentation raw{ell, V, q};
          if (auto sol = integer_solutions(raw, d)) {
            auto opt = optimal_presentation(AffineSpec{sol->particular, sol->basis}, ball);
            if (opt && opt->p.back() <= p) out.insert(*opt);
          }
        }
        int i = ell - 1;
        while (i >= 0 && q[i] == p) q[i--] = 0;
        if (i < 0) break;
        ++q[i];
      }
      return;
    }
    for (int i = start; i < static_cast<int>(prim.size()); ++i) {
      idx[pos] = i;
      rec(pos + 1, i + 1);
    }
  };
  rec(0, 0);
  return {out.begin(), out.end()};
}

}  // namespace qtkam
