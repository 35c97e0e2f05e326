#pragma once
// Shared helpers for the unit and acceptance tests: random inputs and
// brute-force oracles that do not reuse the library's search code.

#include "qtkam/kam.hpp"
#include "qtkam/lattice.hpp"
#include "qtkam/series.hpp"
#include "qtkam/toeplitz.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace qtkam::testing {

using Rng = std::mt19937_64;

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
}

// Nonzero integer vectors with |x|^2 < (C1 N)^2, plain nested loops.
inline std::vector<IntVec> oracle_ball(std::int64_t N, int d, std::int64_t C1) {
  const std::int64_t R = C1 * N;
  std::vector<IntVec> out;
  IntVec x(d, -R);
  while (true) {
    std::int64_t n2 = 0;
    bool zero = true;
    for (auto c : x) {
      n2 += c * c;
      zero = zero && c == 0;
    }
    if (!zero && n2 < R * R) out.push_back(x);
    int i = d - 1;
    while (i >= 0 && x[i] == R) x[i--] = -R;
    if (i < 0) break;
    ++x[i];
  }
  return out;
}

// Rank over Q by fraction-free elimination in big integers.
inline int oracle_rank(std::vector<IntVec> rows) {
  if (rows.empty()) return 0;
  const std::size_t d = rows[0].size();
  std::vector<std::vector<BigInt>> M;
  for (const auto& r : rows) M.emplace_back(r.begin(), r.end());
  int rank = 0;
  for (std::size_t col = 0; col < d && rank < static_cast<int>(M.size()); ++col) {
    std::size_t piv = rank;
    while (piv < M.size() && M[piv][col] == 0) ++piv;
    if (piv == M.size()) continue;
    std::swap(M[piv], M[rank]);
    for (std::size_t r = 0; r < M.size(); ++r) {
      if (static_cast<int>(r) == rank || M[r][col] == 0) continue;
      BigInt a = M[rank][col], b = M[r][col];
      for (std::size_t c = 0; c < d; ++c) M[r][c] = M[r][c] * a - M[rank][c] * b;
    }
    ++rank;
  }
  return rank;
}

// Concatenated (p_1..p_ell, v_1..v_ell).
inline IntVec concat_tuple(const std::vector<std::int64_t>& p, const std::vector<IntVec>& v) {
  IntVec t(p.begin(), p.end());
  for (const auto& x : v) t.insert(t.end(), x.begin(), x.end());
  return t;
}

// Exhaustive minimum over ordered ell-tuples of independent ball vectors v_i
// orthogonal to every direction, with p_i = v_i . offset. The only pruning is
// on the p-prefix, which the concatenated order compares first.
inline std::optional<Presentation> oracle_presentation(const IntVec& offset, const std::vector<IntVec>& dirs,
                                                       std::int64_t N, std::int64_t C1) {
  const int d = static_cast<int>(offset.size());
  const int ell = d - oracle_rank(dirs);
  std::vector<IntVec> cand;
  for (const auto& v : oracle_ball(N, d, C1)) {
    bool ortho = true;
    for (const auto& u : dirs) ortho = ortho && dot(v, u) == 0;
    if (ortho) cand.push_back(v);
  }
  std::optional<IntVec> best;
  std::vector<IntVec> cur;
  std::vector<std::int64_t> ps;
  auto abs_prefix_worse = [&](const std::vector<std::int64_t>& pp) {
    if (!best) return false;
    for (std::size_t i = 0; i < pp.size(); ++i) {
      auto a = std::abs(pp[i]), b = std::abs((*best)[i]);
      if (a != b) return a > b;
    }
    return false;
  };
  std::function<void()> rec = [&]() {
    if (static_cast<int>(cur.size()) == ell) {
      IntVec t = concat_tuple(ps, cur);
      if (!best || signlex_compare(t, *best) < 0) best = t;
      return;
    }
    for (const auto& v : cand) {
      ps.push_back(dot(v, offset));
      if (!abs_prefix_worse(ps)) {
        cur.push_back(v);
        if (oracle_rank(cur) == static_cast<int>(cur.size())) rec();
        cur.pop_back();
      }
      ps.pop_back();
    }
  };
  if (ell > 0) rec();
  if (!best) return std::nullopt;
  Presentation A;
  A.ell = ell;
  for (int i = 0; i < ell; ++i) A.p.push_back((*best)[i]);
  for (int i = 0; i < ell; ++i) A.v.emplace_back(best->begin() + ell + i * d, best->begin() + ell + (i + 1) * d);
  return A;
}

// Branch and bound for larger balls. The optimal |p| sequence is fixed first by
// matroid greedy (it is the lexicographically smallest basis weight sequence);
// the search then ranges over every tuple with those levels, either sign, and
// prunes only on the absolute value prefix of the v part.
inline std::optional<Presentation> oracle_presentation_bb(const IntVec& offset, const std::vector<IntVec>& dirs,
                                                          std::int64_t N, std::int64_t C1) {
  const int d = static_cast<int>(offset.size());
  const int ell = d - oracle_rank(dirs);
  std::vector<IntVec> cand;
  for (const auto& v : oracle_ball(N, d, C1)) {
    bool ortho = true;
    for (const auto& u : dirs) ortho = ortho && dot(v, u) == 0;
    if (ortho) cand.push_back(v);
  }
  auto absvec = [](IntVec v) {
    for (auto& c : v) c = std::abs(c);
    return v;
  };
  std::stable_sort(cand.begin(), cand.end(), [&](const IntVec& a, const IntVec& b) {
    auto pa = std::abs(dot(a, offset)), pb = std::abs(dot(b, offset));
    if (pa != pb) return pa < pb;
    return absvec(a) < absvec(b);
  });
  std::vector<std::int64_t> pstar;
  std::vector<IntVec> basis;
  for (const auto& v : cand) {
    if (static_cast<int>(basis.size()) == ell) break;
    basis.push_back(v);
    if (oracle_rank(basis) == static_cast<int>(basis.size()))
      pstar.push_back(std::abs(dot(v, offset)));
    else
      basis.pop_back();
  }
  if (ell == 0 || static_cast<int>(pstar.size()) < ell) return std::nullopt;

  std::vector<std::vector<IntVec>> level(ell);
  for (int i = 0; i < ell; ++i)
    for (const auto& v : cand)
      if (std::abs(dot(v, offset)) == pstar[i]) level[i].push_back(v);

  std::optional<IntVec> best;
  std::vector<IntVec> cur;
  auto abs_worse = [&]() {
    if (!best) return false;
    for (std::size_t i = 0; i < cur.size(); ++i)
      for (int j = 0; j < d; ++j) {
        auto a = std::abs(cur[i][j]), b = std::abs((*best)[ell + i * d + j]);
        if (a != b) return a > b;
      }
    return false;
  };
  std::function<void()> rec = [&]() {
    const std::size_t i = cur.size();
    if (static_cast<int>(i) == ell) {
      std::vector<std::int64_t> ps;
      for (const auto& v : cur) ps.push_back(dot(v, offset));
      IntVec t = concat_tuple(ps, cur);
      if (!best || signlex_compare(t, *best) < 0) best = t;
      return;
    }
    for (const auto& v : level[i]) {
      cur.push_back(v);
      if (!abs_worse() && oracle_rank(cur) == static_cast<int>(cur.size())) rec();
      cur.pop_back();
    }
  };
  rec();
  if (!best) return std::nullopt;
  Presentation A;
  A.ell = ell;
  for (int i = 0; i < ell; ++i) A.p.push_back((*best)[i]);
  for (int i = 0; i < ell; ++i) A.v.emplace_back(best->begin() + ell + i * d, best->begin() + ell + (i + 1) * d);
  return A;
}

inline Rational random_rational(Rng& rng, int range = 5) {
  std::int64_t num = uniform_int(rng, -range, range);
  std::int64_t den = uniform_int(rng, 1, 3);
  return Rational(num, den);
}

inline ExactCoeff random_exact(Rng& rng) {
  ExactCoeff c(random_rational(rng), random_rational(rng));
  if (is_zero(c)) c.re = 1;
  return c;
}

// Random momentum-conserving monomial: alpha and beta are drawn from the pool,
// k is random with |k_i| <= kmax, and the last beta site is solved for.
inline std::optional<Monomial> random_monomial(Rng& rng, const Problem& problem, const std::vector<IntVec>& pool,
                                               int degree_max, std::int64_t kmax) {
  const int b = problem.b;
  IntVec k(b), l(b, 0);
  for (auto& x : k) x = uniform_int(rng, -kmax, kmax);
  int deg = static_cast<int>(uniform_int(rng, 0, degree_max));
  int lsum = deg >= 2 ? static_cast<int>(uniform_int(rng, 0, deg / 2)) : 0;
  for (int i = 0; i < lsum; ++i) ++l[uniform_int(rng, 0, b - 1)];
  int zdeg = deg - 2 * lsum;
  std::vector<SiteExp> a, bb;
  IntVec mom = pi_k(k, problem);
  if (zdeg == 0) {
    if (!std::all_of(mom.begin(), mom.end(), [](auto x) { return x == 0; })) return std::nullopt;
    return make_monomial(b, k, l);
  }
  int na = static_cast<int>(uniform_int(rng, 0, zdeg - 1));
  int nb = zdeg - na;
  for (int i = 0; i < na; ++i) {
    const auto& s = pool[uniform_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1)];
    a.push_back({s, 1});
    for (int j = 0; j < problem.d; ++j) mom[j] += s[j];
  }
  for (int i = 0; i + 1 < nb; ++i) {
    const auto& s = pool[uniform_int(rng, 0, static_cast<std::int64_t>(pool.size()) - 1)];
    bb.push_back({s, 1});
    for (int j = 0; j < problem.d; ++j) mom[j] -= s[j];
  }
  if (std::find(pool.begin(), pool.end(), mom) == pool.end()) return std::nullopt;
  bb.push_back({mom, 1});
  return make_monomial(b, k, l, mi_normalize(a), mi_normalize(bb));
}

template <class C, class Gen>
Series<C> random_series(Rng& rng, const Problem& problem, const std::vector<IntVec>& pool, int terms,
                        int degree_max, std::int64_t kmax, Gen gen) {
  Series<C> F(problem.b);
  int guard = 0;
  while (static_cast<int>(F.size()) < terms && guard++ < 200 * terms) {
    auto m = random_monomial(rng, problem, pool, degree_max, kmax);
    if (m) F.add(*m, gen(rng));
  }
  return F;
}

inline XSeries random_exact_series(Rng& rng, const Problem& problem, const std::vector<IntVec>& pool, int terms,
                                   int degree_max, std::int64_t kmax) {
  return random_series<ExactCoeff>(rng, problem, pool, terms, degree_max, kmax,
                                   [](Rng& r) { return random_exact(r); });
}

inline GSeries random_grid_series(Rng& rng, const Problem& problem, const std::vector<IntVec>& pool, int terms,
                                  int degree_max, std::int64_t kmax, std::size_t grid) {
  return random_series<GridCoeff>(rng, problem, pool, terms, degree_max, kmax, [grid](Rng& r) {
    std::normal_distribution<double> g;
    std::vector<cplx> v(grid);
    for (auto& z : v) z = cplx(g(r), g(r));
    return GridCoeff(std::move(v));
  });
}

}  // namespace qtkam::testing
