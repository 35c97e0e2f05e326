#include "qtkam/io.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace qtkam {

namespace {

Rational rational_field(const json& j) {
  if (j.is_string()) {
    try {
      return parse_rational(j.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ValidationError(e.what());
    }
  }
  if (j.is_number_integer()) return Rational(j.get<std::int64_t>());
  throw ValidationError("expected a rational as \"p/q\" or an integer");
}

json mi_to_json(const MultiIndex& a) {
  json out = json::array();
  for (const auto& [site, e] : a) out.push_back(json::array({site, e}));
  return out;
}

MultiIndex mi_from_json(const json& j) {
  std::vector<SiteExp> entries;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2) throw ValidationError("malformed exponent entry " + e.dump());
    entries.emplace_back(e[0].get<IntVec>(), e[1].get<int>());
  }
  return mi_normalize(std::move(entries));
}

json header(const char* kind, int b, std::size_t n) {
  return json{{"format", "qtkam-series"}, {"coeff", kind}, {"b", b}, {"terms", n}};
}

json read_header(std::istream& is, const char* expect) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("empty series file");
  json h = json::parse(line);
  if (h.value("format", "") != "qtkam-series") throw ValidationError("not a series file");
  if (expect && h.value("coeff", "") != expect)
    throw ValidationError(std::string("expected ") + expect + " coefficients, found " + h.value("coeff", "?"));
  return h;
}

template <class C, class Parse>
Series<C> read_body(std::istream& is, const json& h, Parse parse) {
  Series<C> F(h.at("b").get<int>());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json t = json::parse(line);
    Monomial m = monomial_from_json(t, F.b);
    if (F.find(m)) throw ValidationError("duplicate monomial " + m.str());
    const json& re = t.at("coeff_re");
    const json& im = t.at("coeff_im");
    if (!re.is_array() || !im.is_array() || re.size() != im.size())
      throw ValidationError("coeff_re and coeff_im must be arrays of equal length");
    F.add(m, parse(re, im));
    ++n;
  }
  if (n != h.at("terms").get<std::size_t>()) throw ValidationError("term count does not match the header");
  return F;
}

}  // namespace

Grid Config::grid() const {
  if (xi_box.empty()) {
    std::vector<double> zero(problem.b, 0.0);
    return Grid::single(zero);
  }
  return Grid::tensor(xi_box, xi_grid_per_dim);
}

Config config_from_json(const json& j) {
  static const std::set<std::string> known{"d", "b", "sites", "tau0", "tau1", "c", "C", "C1", "N0", "mode",
                                           "r", "s", "rho", "gamma", "K", "degree_max", "xi_box",
                                           "xi_grid_per_dim", "schedule_c", "seed"};
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ValidationError("unknown config field '" + it.key() + "'");
  Config c;
  try {
    int d = j.value("d", 2);
    std::vector<IntVec> sites;
    if (j.contains("sites")) {
      sites = j.at("sites").get<std::vector<IntVec>>();
    } else {
      sites.push_back(IntVec(d, 0));
    }
    c.problem = Problem::make(d, sites);
    if (j.contains("b") && j.at("b").get<int>() != c.problem.b)
      throw ValidationError("b does not match the number of sites");
    if (j.contains("C1")) {
      auto c1 = j.at("C1").get<std::int64_t>();
      if (c1 < 1) throw ValidationError("C1 must be >= 1");
      c.problem.C1 = c1;
    }
    if (j.contains("tau0")) c.lp.tau0 = rational_field(j.at("tau0"));
    if (j.contains("tau1")) c.lp.tau1 = rational_field(j.at("tau1"));
    if (j.contains("c")) c.lp.c = rational_field(j.at("c"));
    if (j.contains("C")) c.lp.C = rational_field(j.at("C"));
    c.lp.N0 = j.value("N0", c.lp.N0);
    if (j.contains("mode")) c.lp.mode = parse_mode(j.at("mode").get<std::string>());
    c.r = j.value("r", c.r);
    c.s = j.value("s", c.s);
    c.rho = j.value("rho", c.rho);
    c.gamma = j.value("gamma", c.gamma);
    c.K = j.value("K", c.K);
    c.degree_max = j.value("degree_max", c.degree_max);
    if (j.contains("xi_box")) {
      for (const auto& e : j.at("xi_box")) {
        if (!e.is_array() || e.size() != 2) throw ValidationError("xi_box entries must be [lo, hi]");
        c.xi_box.emplace_back(e[0].get<double>(), e[1].get<double>());
      }
      if (static_cast<int>(c.xi_box.size()) != c.problem.b) throw ValidationError("xi_box must have b entries");
    }
    c.xi_grid_per_dim = j.value("xi_grid_per_dim", c.xi_grid_per_dim);
    c.schedule_c = j.value("schedule_c", c.schedule_c);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  if (!(c.r > 0 && c.s > 0 && c.gamma > 0)) throw ValidationError("r, s and gamma must be positive");
  if (c.K < 1) throw ValidationError("K must be >= 1");
  if (c.xi_grid_per_dim < 1) throw ValidationError("xi_grid_per_dim must be >= 1");
  validate(c.problem, c.lp);
  c.source = j.dump();
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

json config_to_json(const Config& c) {
  json box = json::array();
  for (auto [lo, hi] : c.xi_box) box.push_back({lo, hi});
  return json{{"d", c.problem.d},
              {"b", c.problem.b},
              {"sites", c.problem.sites},
              {"C1", c.problem.C1},
              {"tau0", to_string(c.lp.tau0)},
              {"tau1", to_string(c.lp.tau1)},
              {"c", to_string(c.lp.c)},
              {"C", to_string(c.lp.C)},
              {"N0", c.lp.N0},
              {"mode", to_string(c.lp.mode)},
              {"r", c.r},
              {"s", c.s},
              {"rho", c.rho},
              {"gamma", c.gamma},
              {"K", c.K},
              {"degree_max", c.degree_max},
              {"xi_box", box},
              {"xi_grid_per_dim", c.xi_grid_per_dim},
              {"schedule_c", c.schedule_c},
              {"seed", c.seed}};
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json monomial_to_json(const Monomial& m) {
  return json{{"k", m.k}, {"l", m.l}, {"alpha", mi_to_json(m.alpha)}, {"beta", mi_to_json(m.beta)}};
}

Monomial monomial_from_json(const json& j, int b) {
  try {
    IntVec k = j.at("k").get<IntVec>(), l = j.at("l").get<IntVec>();
    if (static_cast<int>(k.size()) != b || static_cast<int>(l.size()) != b)
      throw ValidationError("k and l must have length b");
    for (auto x : l)
      if (x < 0) throw ValidationError("negative action exponent");
    return make_monomial(b, k, l, mi_from_json(j.at("alpha")), mi_from_json(j.at("beta")));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed monomial: ") + e.what());
  }
}

namespace {

void put_coeff(json& t, const GridCoeff& c) {
  json re = json::array(), im = json::array();
  for (const auto& z : c.v) {
    re.push_back(z.real());
    im.push_back(z.imag());
  }
  t["coeff_re"] = re;
  t["coeff_im"] = im;
}

json presentation_json(const Presentation& A) { return json{{"ell", A.ell}, {"p", A.p}, {"v", A.v}}; }

}  // namespace

void write_series(std::ostream& os, const GSeries& F) {
  os << header("grid", F.b, F.size()).dump() << "\n";
  for (const auto& [m, c] : F.terms) {
    json t = monomial_to_json(m);
    put_coeff(t, c);
    os << t.dump() << "\n";
  }
}

json qt_decomposition_to_json(const QTDecomposition<GridCoeff>& dec) {
  std::map<Presentation, std::size_t> ids;
  json subspaces = json::array(), classes = json::array(), error = json::array();
  for (const auto& [key, e] : dec.classes) {
    auto [it, fresh] = ids.emplace(key.A, ids.size());
    if (fresh) {
      json s = presentation_json(key.A);
      s["id"] = it->second;
      subspaces.push_back(s);
    }
    json c{{"sigma", key.sigma}, {"sigma_p", key.sigma_p}, {"h", key.h},          {"A", it->second},
           {"low", monomial_to_json(key.low)}, {"rep_m", e.rep_m}, {"rep_n", e.rep_n}, {"members", e.members}};
    put_coeff(c, e.coeff);
    classes.push_back(c);
  }
  for (const auto& [m, c] : dec.diff.terms) {
    json t = monomial_to_json(m);
    put_coeff(t, c);
    error.push_back(t);
  }
  return json{{"N", dec.cp.N},         {"theta", to_string(dec.cp.theta)}, {"mu", to_string(dec.cp.mu)},
              {"tau", dec.cp.tau},     {"weight", dec.weight},             {"subspaces", subspaces},
              {"classes", classes},    {"error", error},                   {"b", dec.diff.b}};
}

void write_series(std::ostream& os, const XSeries& F) {
  os << header("exact", F.b, F.size()).dump() << "\n";
  for (const auto& [m, c] : F.terms) {
    json t = monomial_to_json(m);
    t["coeff_re"] = json::array({to_string(c.re)});
    t["coeff_im"] = json::array({to_string(c.im)});
    os << t.dump() << "\n";
  }
}

std::string series_kind(std::istream& is) {
  auto pos = is.tellg();
  json h = read_header(is, nullptr);
  is.clear();
  is.seekg(pos);
  return h.value("coeff", "");
}

GSeries read_grid_series(std::istream& is) {
  if (series_kind(is) == "exact") return to_grid(read_exact_series(is));
  json h = read_header(is, "grid");
  try {
    return read_body<GridCoeff>(is, h, [](const json& re, const json& im) {
      std::vector<cplx> v;
      for (std::size_t i = 0; i < re.size(); ++i) v.emplace_back(re[i].get<double>(), im[i].get<double>());
      return GridCoeff(std::move(v));
    });
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed series: ") + e.what());
  }
}

XSeries read_exact_series(std::istream& is) {
  json h = read_header(is, "exact");
  try {
    return read_body<ExactCoeff>(is, h, [](const json& re, const json& im) {
      if (re.size() != 1) throw ValidationError("exact coefficients hold a single value");
      return ExactCoeff(parse_rational(re[0].get<std::string>()), parse_rational(im[0].get<std::string>()));
    });
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed series: ") + e.what());
  }
}

json RunReport::to_json() const {
  return json{{"command", command}, {"argv", argv},         {"config_hash", config_hash}, {"outputs", outputs},
              {"timing_seconds", timing_seconds}, {"warnings", warnings}, {"results", results}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace qtkam
