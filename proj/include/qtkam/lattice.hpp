#pragma once

#include "qtkam/params.hpp"

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace qtkam {

// Sign-lexicographic order: absolute values lexicographically first; on a tie
// the lexicographically larger signed vector is the smaller element.
int signlex_compare(const IntVec& a, const IntVec& b);
inline bool signlex_less(const IntVec& a, const IntVec& b) { return signlex_compare(a, b) < 0; }

std::int64_t dot(const IntVec& a, const IntVec& b);
std::int64_t norm2(const IntVec& a);
std::string format_vec(const IntVec& v);
IntVec parse_vec(const std::string& text);

// Nonzero x with |x| < C1 N, ascending in sign-lex order.
struct Ball {
  std::int64_t N = 0;
  int d = 0;
  std::vector<IntVec> vecs;
};
Ball make_ball(std::int64_t N, const Problem& problem);
inline std::vector<IntVec> enumerate_ball(std::int64_t N, const Problem& problem) {
  return make_ball(N, problem).vecs;
}

// Incremental rank tracking over Q for small integer vectors.
class RankTracker {
 public:
  explicit RankTracker(int d) : d_(d) {}
  bool independent(const IntVec& v) const;
  bool add(const IntVec& v);  // false (and no change) if dependent
  int rank() const { return static_cast<int>(rows_.size()); }

 private:
  IntVec reduce(const IntVec& v) const;
  int d_;
  std::vector<IntVec> rows_;
  std::vector<int> pivots_;
};

bool span_membership(const IntVec& v, const std::vector<IntVec>& basis);
int rank_of(const std::vector<IntVec>& vecs, int d);

// {x : v_i . x = p_i, i < ell}
struct Presentation {
  int ell = 0;
  std::vector<IntVec> v;
  std::vector<std::int64_t> p;

  Presentation prefix(int j) const;
  bool contains(const IntVec& x) const;
  // Concatenated (p_1..p_ell, v_1..v_ell) used for sign-lex comparison.
  IntVec tuple() const;
  std::string str() const;
  bool operator==(const Presentation& o) const { return ell == o.ell && v == o.v && p == o.p; }
  bool operator<(const Presentation& o) const;  // sign-lex on tuple(), then ell
};

// Affine subspace given as offset + rational span of directions.
struct AffineSpec {
  IntVec offset;
  std::vector<IntVec> dirs;
};

// Sign-lex minimal presentation with every v_i in the ball; nullopt when the
// subspace is not in H_N.
std::optional<Presentation> optimal_presentation(const AffineSpec& A, const Ball& ball);
std::optional<Presentation> optimal_presentation(const IntVec& point, const Ball& ball);
// Smallest N' >= N for which the presentation exists, or nullopt beyond max_N.
std::optional<std::int64_t> needed_N(const AffineSpec& A, std::int64_t N, const Problem& problem,
                                     std::int64_t max_N = 64);

// Thread-safe memo of point presentations for one ball.
class PresentationCache {
 public:
  explicit PresentationCache(Ball ball) : ball_(std::move(ball)) {}
  const Presentation& get(const IntVec& point);
  const Ball& ball() const { return ball_; }

 private:
  Ball ball_;
  std::map<IntVec, Presentation> memo_;
  std::mutex mu_;
};

struct Cut {
  int ell = 0;
  Presentation subspace;  // prefix of length ell
  Presentation full;      // the point's optimal presentation
  CutParams params;
};

std::optional<Cut> find_cut(const IntVec& m, const CutParams& cp, const Problem& problem,
                            const LatticeParams& lp);
std::optional<Cut> find_cut(const IntVec& m, const Presentation& full, const CutParams& cp,
                            const Problem& problem);

struct StandardCut {
  int ell = 0;
  int index = 0;    // i with tau = rho_i
  PowTerm Ntau;     // N^(rho_i)
  double tau = 0;
  bool certified = true;  // p_{ell+1} >= C N^(4 d tau) actually holds
};

// Thresholds N^{S_1..S_d} as PowTerms.
std::vector<PowTerm> standard_thresholds(std::int64_t N, int d, const LatticeParams& lp);
StandardCut standard_cut_levels(const std::vector<BigInt>& p, std::int64_t N, int d, const LatticeParams& lp);
StandardCut standard_cut(const IntVec& m, std::int64_t N, const Problem& problem, const LatticeParams& lp);

// N^(tau(p)) = max(N^tau0, p/c)
PowTerm tau_of_p(std::int64_t p, std::int64_t N, const LatticeParams& lp);

PowTerm default_radius(std::int64_t N, const LatticeParams& lp);  // N^tau1
PowTerm good_threshold(std::int64_t p_ell, std::int64_t N, int d, const LatticeParams& lp);

bool good_portion_contains(const Presentation& A, const IntVec& x, const Ball& ball, const LatticeParams& lp,
                           const std::optional<PowTerm>& radius = std::nullopt);

// Integer points of {V x = p}: x = particular + sum t_j basis_j, or nullopt if empty.
struct LatticeParam {
  IntVec particular;
  std::vector<IntVec> basis;
};
std::optional<LatticeParam> integer_solutions(const Presentation& A, int d);

std::optional<IntVec> choose_good_point(const Presentation& A, const Ball& ball, std::int64_t bound,
                                        const LatticeParams& lp,
                                        const std::optional<PowTerm>& radius = std::nullopt);

enum class PointClass { a0, portion, core, uncovered, site };
std::string to_string(PointClass c);

struct Box {
  std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
  static Box parse(const std::string& text);  // "lo:hi,lo:hi"
  std::size_t count() const;
};

struct Decomposition {
  std::int64_t N = 0;
  PowTerm radius;
  std::vector<IntVec> points;
  std::vector<PointClass> cls;
  std::vector<int> portion_id;  // -1 unless cls == portion
  std::vector<Presentation> portions;
  std::size_t n_a0 = 0, n_portion = 0, n_core = 0, n_uncovered = 0, n_multi = 0;
};

Decomposition decompose_region(const Box& box, std::int64_t N, const Problem& problem, const LatticeParams& lp,
                               const std::optional<PowTerm>& radius = std::nullopt, int jobs = 1);
std::string decomposition_csv(const Decomposition& dec);
std::string decomposition_svg(const Decomposition& dec);

BigInt count_subspaces_bound(std::int64_t N, int ell, std::int64_t p, const Problem& problem);
// Distinct affine subspaces in H_N of codimension ell with optimal p_ell <= p.
std::vector<Presentation> enumerate_subspaces(std::int64_t N, int ell, std::int64_t p, const Problem& problem);

}  // namespace qtkam
