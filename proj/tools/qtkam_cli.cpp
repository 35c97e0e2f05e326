#include "qtkam/io.hpp"
#include "qtkam/kam.hpp"
#include "qtkam/lattice.hpp"
#include "qtkam/series.hpp"
#include "qtkam/toeplitz.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

using namespace qtkam;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path, mode, out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 1;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& p : split(s, ',')) {
    try {
      out.push_back(std::stod(p));
    } catch (const std::exception&) {
      throw ValidationError("not a number: " + p);
    }
  }
  return out;
}

std::vector<std::int64_t> parse_ints(const std::string& s) {
  std::vector<std::int64_t> out;
  for (const auto& p : split(s, ',')) {
    try {
      out.push_back(std::stoll(p));
    } catch (const std::exception&) {
      throw ValidationError("not an integer: " + p);
    }
  }
  return out;
}

// Without --config the problem is d-dimensional with only the origin as site.
Config make_config(const Globals& g, int d_fallback) {
  Config c;
  if (!g.config_path.empty()) {
    c = load_config(g.config_path);
  } else {
    json j = {{"d", d_fallback}};
    if (d_fallback > 2) j["tau1"] = std::to_string(8 * d_fallback + 1);
    c = config_from_json(j);
  }
  if (!g.mode.empty()) c.lp.mode = parse_mode(g.mode);
  if (g.seed_set) c.seed = g.seed;
  return c;
}

json presentation_json(const Presentation& A) {
  return json{{"ell", A.ell}, {"p", A.p}, {"v", A.v}, {"text", A.str()}};
}

struct NlsFlags {
  int p = 2;
  std::int64_t support_radius = 1;
  std::string I0;
};

void add_nls_flags(CLI::App* app, NlsFlags& f) {
  app->add_option("--p", f.p, "Hamiltonian |u|^{2p}, i.e. f(u) = |u|^{2p-2}u");
  app->add_option("--support-radius", f.support_radius, "normal modes |m|_inf <= R");
  app->add_option("--I0", f.I0, "comma-separated amplitudes, default 3r^2");
}

NlsSetup make_nls(const Config& c, const NlsFlags& f) {
  std::vector<double> I0 = f.I0.empty() ? std::vector<double>(c.problem.b, 3 * c.r * c.r) : parse_doubles(f.I0);
  return build_nls(c.problem, f.p, I0, c.r, cube_support(c.problem, f.support_radius), c.grid(), c.degree_max);
}

Schedule make_schedule(const Config& c) {
  Schedule s;
  s.s0 = c.s;
  s.r0 = c.r;
  s.c = c.schedule_c;
  s.K0 = c.K;
  s.gamma = c.gamma;
  s.rho = c.rho;
  s.lp = c.lp;
  s.d = c.problem.d;
  return s;
}

json step_json(const StepReport& r) {
  return json{{"step", r.step},
              {"eps_in", r.eps_in},
              {"eps_out", r.eps_out},
              {"predicted_eps", r.predicted_eps},
              {"K", r.K},
              {"r", r.r},
              {"s", r.s},
              {"theta", to_string(r.theta)},
              {"mu", to_string(r.mu)},
              {"alive", r.alive},
              {"grid", r.grid},
              {"homological_residual", r.homological_residual},
              {"min_divisor", r.min_divisor},
              {"omega_shift", r.omega_shift},
              {"imag_residue", r.imag_residue},
              {"lie_tail", r.lie_tail},
              {"norm_F", r.norm_F},
              {"qt_norm", r.qt_norm},
              {"terms", r.terms},
              {"warnings", r.warnings}};
}

std::vector<double> real_values(const GridCoeff& c, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = c.at(i).real();
  return out;
}

json normal_form_json(const NormalForm& nf) {
  const std::size_t n = nf.grid.size();
  json omega = json::array(), tilde = json::array();
  for (const auto& w : nf.omega) omega.push_back(real_values(w, n));
  for (const auto& [site, c] : nf.omega_tilde) tilde.push_back({{"site", site}, {"values", real_values(c, n)}});
  std::vector<int> alive(nf.alive.begin(), nf.alive.end());
  return json{{"grid", nf.grid.points}, {"alive", alive}, {"e", real_values(nf.e, n)},
              {"omega", omega}, {"omega_tilde", tilde}};
}

template <class S>
void save_series(const std::string& path, const S& F) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  write_series(out, F);
}

GSeries load_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("missing input file " + path);
  return read_grid_series(in);
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"quasi-Toeplitz KAM toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config")->check(CLI::ExistingFile);
  app.add_option("--mode", g.mode, "paper or desk")->check(CLI::IsMember({"paper", "desk"}));
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) {
    g.seed = s;
    g.seed_set = true;
  });
  app.add_option("--jobs", g.jobs, "worker cap")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out_dir, "output directory");

  std::string point, box_text;
  std::int64_t N = 2;
  std::string theta_s = "1", mu_s = "1", tau_s;
  auto* present = app.add_subcommand("present", "optimal presentation of a point");
  present->add_option("--point", point)->required();
  present->add_option("--N", N)->required();

  auto* cut = app.add_subcommand("cut", "cut of a point for (N, theta, mu, tau)");
  cut->add_option("--point", point)->required();
  cut->add_option("--N", N)->required();
  cut->add_option("--theta", theta_s);
  cut->add_option("--mu", mu_s);
  cut->add_option("--tau", tau_s, "default tau0");

  std::int64_t radius = 0;
  auto* decompose = app.add_subcommand("decompose", "good-portion decomposition of a box");
  decompose->add_option("--box", box_text)->required();
  decompose->add_option("--N", N)->required();
  decompose->add_option("--radius", radius, "good-portion radius, default N^tau1");

  std::string f_path, g_path, series_path;
  int degree_max = -1;
  auto* bracket = app.add_subcommand("bracket", "Poisson bracket of two series");
  bracket->add_option("--f", f_path)->required()->check(CLI::ExistingFile);
  bracket->add_option("--g", g_path)->required()->check(CLI::ExistingFile);
  bracket->add_option("--degree-max", degree_max);

  double r_flag = -1, s_flag = -1, rho_flag = -1;
  auto* norm = app.add_subcommand("norm", "majorant vector-field norm of a series");
  norm->add_option("--series", series_path)->required()->check(CLI::ExistingFile);
  norm->add_option("--r", r_flag);
  norm->add_option("--s", s_flag);
  norm->add_option("--rho", rho_flag);

  std::string k_text, l_text, omega0_text;
  std::int64_t h = 0, K_flag = -1;
  bool union_h = false, excluded = false;
  std::size_t samples = 100000;
  double rho_exp = 0;
  NlsFlags nls_flags;
  auto* measure = app.add_subcommand("measure", "resonant-set measure estimates");
  measure->add_option("--k", k_text);
  measure->add_option("--l", l_text, "JSON list [[site, exponent], ...]");
  measure->add_option("--shift", h, "fixed integer h");
  measure->add_flag("--union-h", union_h, "distance to the nearest integer");
  measure->add_option("--omega0", omega0_text, "default |n_j|^2");
  measure->add_option("--samples", samples);
  measure->add_option("--K", K_flag);
  measure->add_option("--rho-exp", rho_exp, "delta = gamma K^{-rho}");
  measure->add_flag("--excluded", excluded, "excluded fraction of the NLS instance grid");
  add_nls_flags(measure, nls_flags);

  int steps = 3, lie_order = 4;
  bool with_qt = false;
  std::string N_list_text, tau_list_text;
  auto* kam_run = app.add_subcommand("kam-run", "KAM iteration on the NLS instance");
  kam_run->add_option("--steps", steps);
  kam_run->add_option("--lie-order", lie_order);
  kam_run->add_flag("--qt-norm", with_qt);
  kam_run->add_option("--N-list", N_list_text, "condition iv N values");
  add_nls_flags(kam_run, nls_flags);

  auto* qt = app.add_subcommand("qt-norm", "surrogate quasi-Toeplitz norm of a series");
  qt->add_option("--series", series_path)->required()->check(CLI::ExistingFile);
  qt->add_option("--theta", theta_s);
  qt->add_option("--mu", mu_s);
  qt->add_option("--N-list", N_list_text);
  qt->add_option("--tau-list", tau_list_text);
  qt->add_option("--r", r_flag);
  qt->add_option("--s", s_flag);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.argv.assign(argv + 1, argv + argc);
  CLI::App* sub = app.get_subcommands().front();
  report.command = sub->get_name();
  fs::create_directories(g.out_dir);
  auto out_path = [&](const std::string& name) {
    std::string p = (fs::path(g.out_dir) / name).string();
    report.outputs.push_back(p);
    return p;
  };
  json& res = report.results;

  IntVec pt;
  if (!point.empty()) pt = parse_vec(point);
  Config cfg = make_config(g, pt.empty() ? 2 : static_cast<int>(pt.size()));
  report.config_hash = hex64(fnv1a64(config_to_json(cfg).dump()));
  {
    ValidationReport vr = validate(cfg.problem, cfg.lp);
    std::string failed;
    for (const auto& f : vr.failures()) failed += (failed.empty() ? "" : ", ") + f;
    json items = json::array();
    for (const auto& it : vr.items) items.push_back({{"name", it.name}, {"pass", it.pass}, {"detail", it.detail}});
    res["validation"] = {{"mode", to_string(vr.mode)}, {"items", items}};
    if (!vr.ok) throw ValidationError("paper mode: parameter inequalities fail: " + failed);
    if (!failed.empty()) report.warnings.push_back("desk mode: parameter inequalities fail: " + failed);
  }
  const Problem& problem = cfg.problem;
  LatticeParams& lp = cfg.lp;
  if (!pt.empty() && static_cast<int>(pt.size()) != problem.d) throw ValidationError("point dimension != d");
  if (r_flag > 0) cfg.r = r_flag;
  if (s_flag > 0) cfg.s = s_flag;
  if (rho_flag > 0) cfg.rho = rho_flag;
  if (K_flag > 0) cfg.K = K_flag;
  NormCtx ctx;
  ctx.r = cfg.r;
  ctx.s = cfg.s;
  ctx.rho = cfg.rho;
  ctx.d = problem.d;

  if (sub == present) {
    if (N < 1) throw ValidationError("N must be >= 1");
    auto A = optimal_presentation(pt, make_ball(N, problem));
    if (!A) throw ValidationError("no presentation within the ball");
    res["point"] = pt;
    res["N"] = N;
    res["presentation"] = presentation_json(*A);
    std::cout << format_vec(pt) << " -> " << A->str() << "\n";
  } else if (sub == cut) {
    Rational tau = tau_s.empty() ? lp.tau0 : parse_rational(tau_s);
    auto cp = CutParams::make(N, parse_rational(theta_s), parse_rational(mu_s), tau);
    validate_cut(cp, problem, lp);
    auto c = find_cut(pt, cp, problem, lp);
    auto sc = standard_cut(pt, N, problem, lp);
    res["standard_cut"] = {{"ell", sc.ell}, {"tau", sc.tau}, {"certified", sc.certified}};
    if (c) {
      res["cut"] = {{"ell", c->ell}, {"subspace", presentation_json(c->subspace)}, {"full", presentation_json(c->full)}};
      std::cout << "cut ell=" << c->ell << " subspace " << c->subspace.str() << "\n";
    } else {
      res["cut"] = nullptr;
      std::cout << "no cut\n";
    }
    std::cout << "standard cut ell=" << sc.ell << " tau=" << sc.tau << (sc.certified ? "" : " (uncertified)") << "\n";
  } else if (sub == decompose) {
    Box box = Box::parse(box_text);
    if (static_cast<int>(box.ranges.size()) != problem.d) throw ValidationError("box dimension != d");
    std::optional<PowTerm> rad;
    if (radius > 0) rad = PowTerm{Rational(radius), Rational(0), N};
    auto dec = decompose_region(box, N, problem, lp, rad, g.jobs);
    write_text(out_path("decomposition.csv"), decomposition_csv(dec));
    if (problem.d == 2) write_text(out_path("decomposition.svg"), decomposition_svg(dec));
    res["counts"] = {{"a0", dec.n_a0},           {"portion", dec.n_portion}, {"core", dec.n_core},
                     {"uncovered", dec.n_uncovered}, {"multi", dec.n_multi}, {"portions", dec.portions.size()}};
    std::cout << "a0=" << dec.n_a0 << " portion=" << dec.n_portion << " core=" << dec.n_core
              << " uncovered=" << dec.n_uncovered << " multi=" << dec.n_multi << "\n";
  } else if (sub == bracket) {
    Trunc tr;
    if (degree_max >= 0) tr.degree_max = degree_max;
    std::ifstream fi(f_path), gi(g_path);
    if (series_kind(fi) == "exact" && series_kind(gi) == "exact") {
      auto F = read_exact_series(fi), G = read_exact_series(gi);
      auto B = poisson_bracket(F, G, tr);
      save_series(out_path("bracket.jsonl"), B);
      res["terms"] = B.size();
    } else {
      auto F = read_grid_series(fi), G = read_grid_series(gi);
      auto B = poisson_bracket(F, G, tr);
      save_series(out_path("bracket.jsonl"), B);
      res["terms"] = B.size();
    }
    std::cout << "terms=" << res["terms"] << "\n";
  } else if (sub == norm) {
    auto F = load_grid(series_path);
    double v = vector_field_norm(F, ctx);
    res["norm"] = v;
    res["majorant"] = majorant_norm(F, ctx);
    std::cout << v << "\n";
  } else if (sub == measure) {
    if (excluded) {
      auto nls = make_nls(cfg, nls_flags);
      MelnikovOptions mo;
      mo.K = cfg.K;
      mo.gamma = cfg.gamma;
      auto em = excluded_measure(nls.nf, mo, problem, lp, g.jobs);
      res["excluded"] = {{"fraction", em.fraction}, {"bound", em.bound}, {"constant", em.constant},
                         {"points", em.points}, {"failed", em.failed}};
      std::cout << "excluded fraction=" << em.fraction << " bound=" << em.bound << "\n";
    } else {
      AffineFamily fam;
      if (cfg.xi_box.empty()) fam.box.assign(problem.b, {0.0, 1.0});
      else fam.box = cfg.xi_box;
      if (omega0_text.empty())
        for (const auto& n : problem.sites) fam.omega0.push_back(static_cast<double>(norm2(n)));
      else
        fam.omega0 = parse_doubles(omega0_text);
      ResonanceQuery q;
      q.k = k_text.empty() ? IntVec(problem.b, 0) : parse_ints(k_text);
      if (!l_text.empty()) {
        for (const auto& e : json::parse(l_text)) q.l.emplace_back(e.at(0).get<IntVec>(), e.at(1).get<int>());
      }
      q.h = h;
      q.union_h = union_h;
      q.gamma = cfg.gamma;
      q.K = cfg.K;
      q.rho = rho_exp;
      auto est = resonant_measure(fam, q, samples, cfg.seed);
      res["monte_carlo"] = {{"measure", est.measure}, {"sigma", est.sigma}, {"samples", est.samples}};
      res["bound"] = est.bound;
      if (est.exact) res["exact"] = *est.exact;
      std::cout << "measure=" << est.measure << " sigma=" << est.sigma << " bound=" << est.bound;
      if (est.exact) std::cout << " exact=" << *est.exact;
      std::cout << "\n";
    }
  } else if (sub == kam_run) {
    auto nls = make_nls(cfg, nls_flags);
    Schedule sched = make_schedule(cfg);
    StepOptions so;
    so.lie_order = lie_order;
    so.degree_max = cfg.degree_max;
    so.jobs = g.jobs;
    so.qt_norm = with_qt;
    so.N_list = parse_ints(N_list_text);
    auto init = initial_state(nls, sched);
    auto it = iterate(init, sched, so, steps, problem, lp);
    json js = json::array();
    for (const auto& s : it.steps) {
      js.push_back(step_json(s));
      for (const auto& w : s.warnings) report.warnings.push_back("step " + std::to_string(s.step) + ": " + w);
    }
    json kam = {{"eps", it.eps},
                {"K", it.K},
                {"log_ratio", it.log_ratio},
                {"fitted_exponent", it.fitted_exponent},
                {"fitted_constant", it.fitted_constant},
                {"max_omega_drift", it.max_omega_drift},
                {"stop_reason", it.stop_reason},
                {"steps", js}};
    write_text(out_path("kam_steps.json"), kam.dump(2) + "\n");
    save_series(out_path("final_P.jsonl"), it.final_state.P);
    for (std::size_t i = 0; i < it.generators.size(); ++i)
      save_series(out_path("F_" + std::to_string(i) + ".jsonl"), it.generators[i]);
    write_text(out_path("normal_form.json"), normal_form_json(it.final_state.nf).dump(2) + "\n");
    res["eps"] = it.eps;
    res["fitted_exponent"] = it.fitted_exponent;
    for (std::size_t i = 0; i < it.eps.size(); ++i) std::cout << "eps_" << i << " = " << it.eps[i] << "\n";
    std::cout << "fitted exponent " << it.fitted_exponent << "\n";
  } else if (sub == qt) {
    auto F = load_grid(series_path);
    std::vector<std::int64_t> Ns = N_list_text.empty() ? default_N_list(cfg.K) : parse_ints(N_list_text);
    std::vector<Rational> taus;
    for (const auto& t : split(tau_list_text, ',')) taus.push_back(parse_rational(t));
    auto rep = quasi_toeplitz_norm(F, parse_rational(theta_s), parse_rational(mu_s), Ns, taus, ctx, problem, lp);
    json entries = json::array();
    for (const auto& e : rep.entries)
      entries.push_back({{"N", e.N}, {"tau", e.tau}, {"norm_F", e.norm_F}, {"norm_toeplitz", e.norm_toeplitz},
                         {"norm_error", e.norm_error}, {"classes", e.classes}});
    if (taus.empty()) taus = default_tau_list(problem.d, lp);
    const Rational theta = parse_rational(theta_s), mu = parse_rational(mu_s);
    for (auto N : Ns)
      for (std::size_t i = 0; i < taus.size(); ++i) {
        auto dec = toeplitz_fit(F, CutParams::make(N, theta, mu, taus[i]), problem, lp);
        if (dec.projected.empty()) continue;
        write_text(out_path("qt_classes_N" + std::to_string(N) + "_tau" + std::to_string(i) + ".json"),
                   qt_decomposition_to_json(dec).dump(2) + "\n");
      }
    res["qt_norm"] = rep.value;
    res["plain"] = rep.plain;
    res["entries"] = entries;
    for (const auto& w : rep.warnings) report.warnings.push_back(w);
    std::cout << "qt_norm=" << rep.value << " plain=" << rep.plain << "\n";
  }

  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  report.timing_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string path = (fs::path(g.out_dir) / "report.json").string();
  report.outputs.push_back(path);
  write_text(path, report.to_json().dump(2) + "\n");
  return 0;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
