#pragma once

/**
 * @file cli.hpp
 * @brief Run configuration intake and orchestration behind the `malab` executable.
 *
 * A run is a JSON object.  `run` turns a validated config into in-memory artifacts;
 * `write_artifacts` puts them on disk (temp file + rename).  Usage problems are thrown
 * as ErrorKind::usage, everything else is a module error.
 */

#include "malab/blowup.hpp"
#include "malab/ma_solver.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace malab::cli {

struct Artifact {
  std::string name;
  std::string content;
};

struct RunOutput {
  json summary;
  std::vector<Artifact> artifacts;
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"solve", "geometry", "verify", "blowup", "catalog"};
  return c;
}

inline const std::vector<std::string>& suites() {
  static const std::vector<std::string> s{"identities", "prop31", "functionals", "ladder", "lemma71", "all"};
  return s;
}

namespace detail {

// leaf types: integer, number, string, boolean, vector (numbers), points (vectors), object (free form)
inline const json& config_keys() {
  static const json keys = {
      {"command", "string"},
      {"n", "integer"},
      {"seed", "integer"},
      {"threads", "integer"},
      {"out", "string"},
      {"side", "string"},
      {"fixture", "string"},
      {"fixture_params", "object"},
      {"domain", "object"},
      {"drift", {{"d0", "number"}, {"d", "vector"}}},
      {"h", "number"},
      {"boundary", {{"kind", "string"}, {"scale", "number"}}},
      {"solver", {{"max_newton_iters", "integer"}, {"residual_tol", "number"}, {"damping", "number"}, {"min_step", "number"}, {"init", "string"}}},
      {"input", "string"},
      {"input_grid", "string"},
      {"points", "points"},
      {"probes", {{"count", "integer"}, {"lo", "vector"}, {"hi", "vector"}, {"margin", "number"}}},
      {"suite", "string"},
      {"tolerances", {{"identity", "number"}, {"inequality", "number"}, {"gate", "number"}}},
      {"p", "vector"},
      {"C", "number"},
      {"ladder", "vector"},
      {"functionals",
       {{"m_sec4", "number"}, {"m_lemma61", "number"}, {"m_lemma63", "number"}, {"d", "number"}, {"b", "number"}, {"epsilon", "number"},
        {"probes_per_axis", "integer"}, {"directions", "integer"}}},
      {"lemma71", {{"delta", "number"}, {"Rprime", "number"}, {"per_axis", "integer"}}},
      {"blowup", {{"directions", "integer"}, {"sphere_probes", "integer"}, {"dump_fields", "boolean"}, {"field_h", "number"}}}};
  return keys;
}

inline bool is_vector(const json& v) {
  return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); });
}

inline bool has_type(const json& v, const std::string& type) {
  if (type == "integer") return v.is_number_integer();
  if (type == "number") return v.is_number();
  if (type == "string") return v.is_string();
  if (type == "boolean") return v.is_boolean();
  if (type == "vector") return is_vector(v);
  if (type == "points") return v.is_array() && std::all_of(v.begin(), v.end(), is_vector);
  return v.is_object();
}

inline void check_keys(const json& cfg, const json& allowed, const std::string& prefix) {
  if (!cfg.is_object()) throw Error(ErrorKind::usage, "config '" + prefix + "' must be an object");
  for (const auto& [key, value] : cfg.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!allowed.contains(key)) throw Error(ErrorKind::usage, "unknown config key '" + path + "'");
    const json& s = allowed.at(key);
    if (s.is_object()) {
      check_keys(value, s, path);
    } else if (!has_type(value, s.get<std::string>())) {
      throw Error(ErrorKind::usage, "config key '" + path + "' must be of type " + s.get<std::string>());
    }
  }
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorKind::usage, msg);
}

inline bool member(const std::vector<std::string>& v, const std::string& s) { return std::find(v.begin(), v.end(), s) != v.end(); }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace detail

/// Sets `path` (dotted) to `raw`, parsed as JSON when possible and kept as a string otherwise.
inline void apply_set(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::usage, "--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error(ErrorKind::usage, "bad --set path '" + path + "'");
    if (!node->is_object()) throw Error(ErrorKind::usage, "--set path '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

/// Key/type check plus the semantic rules; returns the config with defaults filled in.
inline json validate_config(json cfg) {
  using detail::require;
  detail::check_keys(cfg, detail::config_keys(), "");
  require(cfg.contains("command"), "config has no command");
  const std::string command = cfg.at("command");
  require(detail::member(commands(), command), "unknown command '" + command + "'");

  cfg["n"] = cfg.value("n", 2);
  const int n = cfg.at("n");
  require(n >= 2, "n must be at least 2");
  cfg["seed"] = cfg.value("seed", 0);
  require(cfg.at("seed").get<long long>() >= 0, "seed must be non-negative");
  cfg["threads"] = cfg.value("threads", 1);
  require(cfg.at("threads").get<int>() >= 1, "threads must be at least 1");
  cfg["out"] = cfg.value("out", std::string("malab_out"));

  if (cfg.contains("side")) side_from_string(cfg.at("side"));
  if (cfg.contains("fixture"))
    require(detail::member(fixture_names(), cfg.at("fixture")), "unknown fixture '" + cfg.at("fixture").get<std::string>() + "'");
  if (cfg.contains("domain")) {
    try {
      require(ConvexDomain::from_json(cfg.at("domain")).dim() == n, "domain dimension differs from n");
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::usage) throw;
      throw Error(ErrorKind::usage, std::string("invalid domain: ") + e.what(), e.details());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::usage, std::string("invalid domain: ") + e.what());
    }
  }
  auto check_dim = [&](const char* key, const json& v) {
    require(static_cast<int>(v.size()) == n, std::string(key) + " must have n entries");
  };
  if (cfg.contains("drift")) {
    require(cfg.at("drift").contains("d"), "drift needs d");
    check_dim("drift.d", cfg.at("drift").at("d"));
  }
  if (cfg.contains("p")) check_dim("p", cfg.at("p"));
  if (cfg.contains("points"))
    for (const auto& pt : cfg.at("points")) check_dim("every point", pt);
  if (cfg.contains("probes")) {
    const json& pr = cfg.at("probes");
    if (pr.contains("lo")) check_dim("probes.lo", pr.at("lo"));
    if (pr.contains("hi")) check_dim("probes.hi", pr.at("hi"));
    require(pr.value("count", 1) >= 1, "probes.count must be positive");
  }
  if (cfg.contains("h")) require(cfg.at("h").get<double>() > 0, "h must be positive");
  if (cfg.contains("boundary")) {
    const std::string kind = cfg.at("boundary").value("kind", std::string("quadratic"));
    require(kind == "fixture" || kind == "quadratic", "boundary.kind must be 'fixture' or 'quadratic'");
    require(kind != "fixture" || cfg.contains("fixture"), "boundary.kind 'fixture' needs a fixture");
  }
  if (cfg.contains("suite")) require(detail::member(suites(), cfg.at("suite")), "unknown suite '" + cfg.at("suite").get<std::string>() + "'");
  for (const char* key : {"input", "input_grid"})
    if (cfg.contains(key)) require(std::filesystem::exists(cfg.at(key).get<std::string>()), std::string(key) + " path does not exist");
  require(cfg.contains("input") == cfg.contains("input_grid"), "input and input_grid go together");
  require(!(cfg.contains("input") && cfg.contains("fixture")) || command == "solve", "give either a fixture or an input field");

  if (command == "solve") {
    require(cfg.contains("domain"), "solve needs a domain");
  } else if (command == "geometry" || command == "verify") {
    require(cfg.contains("fixture") || cfg.contains("input"), command + " needs a fixture or an input field");
  } else if (command == "blowup") {
    require(cfg.contains("fixture"), "blowup needs a fixture");
    require(n == 2 || n == 3, "blowup supports n = 2 and n = 3");
  }
  return cfg;
}

namespace detail {

inline OraclePtr fixture_of(const json& cfg) {
  return make_fixture(cfg.at("fixture"), cfg.at("n"), cfg.value("fixture_params", json::object()));
}

inline Side natural_side(const FieldOracle& f) { return f.drift(Side::primal) ? Side::primal : Side::dual; }

inline Side side_of(const json& cfg, const FieldOracle* f) {
  if (cfg.contains("side")) return side_from_string(cfg.at("side"));
  return f ? natural_side(*f) : Side::primal;
}

/// Default probe box and base point per fixture: dual_log lives on xi1 > 0.
inline Vector natural_point(const json& cfg) {
  Vector p = Vector::Zero(cfg.at("n").get<int>());
  if (cfg.value("fixture", std::string()) == "dual_log") p(0) = 1.0;
  return p;
}

inline std::vector<Vector> probe_points(const json& cfg) {
  if (cfg.contains("points")) {
    std::vector<Vector> pts;
    for (const auto& p : cfg.at("points")) pts.push_back(vector_from_json(p));
    return pts;
  }
  const int n = cfg.at("n");
  const json pr = cfg.value("probes", json::object());
  Vector lo = Vector::Constant(n, -1.0), hi = Vector::Constant(n, 1.0);
  if (cfg.value("fixture", std::string()) == "dual_log") {
    lo(0) = 0.5;
    hi(0) = 2.0;
  }
  if (pr.contains("lo")) lo = vector_from_json(pr.at("lo"));
  if (pr.contains("hi")) hi = vector_from_json(pr.at("hi"));
  return random_probes(lo, hi, pr.value("count", 100), cfg.at("seed").get<std::uint64_t>());
}

inline GridFunction input_field(const json& cfg) {
  const json meta = json::parse(read_file(cfg.at("input_grid")), nullptr, false);
  if (meta.is_discarded()) throw Error(ErrorKind::io, "input_grid is not valid JSON");
  return from_csv(read_file(cfg.at("input")), meta);
}

inline ProofFunctionals functionals_of(const json& cfg) {
  ProofFunctionals pf;
  const json f = cfg.value("functionals", json::object());
  pf.C = cfg.value("C", 1.0);
  if (f.contains("m_sec4")) pf.m_sec4 = f.at("m_sec4").get<double>();
  if (f.contains("m_lemma61")) pf.m_lemma61 = f.at("m_lemma61").get<double>();
  if (f.contains("m_lemma63")) pf.m_lemma63 = f.at("m_lemma63").get<double>();
  if (f.contains("d")) pf.d = f.at("d").get<double>();
  if (f.contains("b")) pf.b = f.at("b").get<double>();
  if (f.contains("epsilon")) pf.epsilon = f.at("epsilon").get<double>();
  pf.probes_per_axis = f.value("probes_per_axis", 0);
  pf.directions = f.value("directions", 0);
  return pf;
}

inline std::vector<double> ladder_of(const json& cfg, std::vector<double> fallback) {
  return cfg.contains("ladder") ? cfg.at("ladder").get<std::vector<double>>() : fallback;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline std::string file_stem(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

// ---- commands ----

inline RunOutput run_catalog(const json& cfg) {
  json list = json::array();
  for (const auto& name : fixture_names()) list.push_back(make_fixture(name, cfg.at("n"))->describe());
  const json out{{"command", "catalog"}, {"n", cfg.at("n")}, {"fixtures", list}};
  return {out, {{"catalog.json", dump(out)}}};
}

inline RunOutput run_solve(const json& cfg) {
  const int n = cfg.at("n");
  const ConvexDomain domain = ConvexDomain::from_json(cfg.at("domain"));
  const OraclePtr fixture = cfg.contains("fixture") ? fixture_of(cfg) : nullptr;
  const Side side = side_of(cfg, fixture.get());

  DriftCoefficients drift = DriftCoefficients::zero(n);
  if (cfg.contains("drift")) {
    drift = DriftCoefficients::from_json(json{{"d0", cfg.at("drift").value("d0", 0.0)}, {"d", cfg.at("drift").at("d")}});
  } else if (fixture) {
    const auto dr = fixture->drift(side);
    if (!dr) throw Error(ErrorKind::usage, "fixture has no drift on the " + std::string(to_string(side)) + " side; give drift");
    drift = *dr;
  }

  const json bcfg = cfg.value("boundary", json{{"kind", fixture ? "fixture" : "quadratic"}});
  const std::string kind = bcfg.value("kind", std::string("quadratic"));
  const double scale = bcfg.value("scale", 1.0);
  BoundaryFunction boundary;
  if (kind == "fixture") {
    boundary = [fixture](const Vector& x) { return fixture->value(x); };
  } else {
    boundary = [scale](const Vector& x) { return 0.5 * scale * x.squaredNorm(); };
  }

  SolverConfig sc;
  const json s = cfg.value("solver", json::object());
  sc.max_newton_iters = s.value("max_newton_iters", sc.max_newton_iters);
  sc.residual_tol = s.value("residual_tol", sc.residual_tol);
  sc.damping = s.value("damping", sc.damping);
  sc.min_step = s.value("min_step", sc.min_step);
  sc.init = s.value("init", sc.init);
  sc.threads = cfg.at("threads");

  const double h = cfg.value("h", 1.0 / 32);
  const auto grid = solver_grid(domain, h);
  std::optional<GridFunction> initial;
  if (sc.init == "given") {
    if (!cfg.contains("input")) throw Error(ErrorKind::usage, "solver.init 'given' needs input and input_grid");
    const GridFunction in = input_field(cfg);
    std::vector<double> vals(grid->size(), 0.0);
    for (std::size_t node = 0; node < grid->size(); ++node) {
      if (grid->kind(node) == NodeKind::outside) continue;
      const std::size_t k = in.grid().nearest_node(grid->point(node));
      if ((in.grid().point(k) - grid->point(node)).norm() > 1e-9 * h)
        throw Error(ErrorKind::usage, "input grid does not match the solve grid");
      vals[node] = in[k];
    }
    initial.emplace(grid, std::move(vals));
  }
  const SolveResult res = newton_solve(domain, grid, drift, side, boundary, sc, initial ? &*initial : nullptr);

  std::size_t interior = 0;
  double err = 0.0;
  for (std::size_t node = 0; node < grid->size(); ++node) {
    if (grid->kind(node) != NodeKind::interior) continue;
    ++interior;
    if (fixture) err = std::max(err, std::abs(res.solution[node] - fixture->value(grid->point(node))));
  }
  json report{{"command", "solve"},
              {"n", n},
              {"side", to_string(side)},
              {"h", h},
              {"drift", drift.to_json()},
              {"boundary", json{{"kind", kind}, {"scale", scale}}},
              {"solver", sc.to_json()},
              {"grid", json{{"nodes", grid->size()}, {"interior", interior}}},
              {"report", res.report.to_json()},
              {"reference", fixture ? json{{"fixture", fixture->describe()}, {"max_interior_error", err}} : json(nullptr)}};
  return {json{{"command", "solve"}, {"iterations", res.report.iterations}, {"final_residual", res.report.final_residual}},
          {{"solution.csv", to_csv(res.solution)}, {"solution.grid.json", dump(grid->metadata())}, {"solver_report.json", dump(report)}}};
}

inline RunOutput run_geometry(const json& cfg) {
  std::ostringstream lines;
  std::size_t count = 0;
  if (cfg.contains("input")) {
    const GridFunction f = input_field(cfg);
    const Side side = side_of(cfg, nullptr);
    for (const Vector& x : probe_points(cfg)) {
      lines << geometry_sample(f, f.grid().nearest_node(x), side).to_json().dump() << '\n';
      ++count;
    }
  } else {
    const OraclePtr f = fixture_of(cfg);
    const Side side = side_of(cfg, f.get());
    for (const Vector& x : probe_points(cfg)) {
      json j = geometry_sample(*f, x, side).to_json();
      j["structure"] = structure_residuals(*f, x, side).to_json();
      lines << j.dump() << '\n';
      ++count;
    }
  }
  return {json{{"command", "geometry"}, {"samples", count}}, {{"geometry.jsonl", lines.str()}}};
}

inline RunOutput run_verify(const json& cfg) {
  const std::string suite = cfg.value("suite", std::string("identities"));
  const json tol = cfg.value("tolerances", json::object());
  const int threads = cfg.at("threads");
  std::vector<Artifact> files;
  json results = json::object();
  bool pass = true;
  auto wants = [&](const char* s) { return suite == s || (suite == "all" && (std::string(s) == "identities" || std::string(s) == "prop31")); };

  Prop31Options po;
  po.tolerance = tol.value("inequality", po.tolerance);
  po.gate_tolerance = tol.value("gate", po.gate_tolerance);
  po.margin = cfg.value("probes", json::object()).value("margin", 0.0);

  json source;
  if (cfg.contains("input")) {
    const GridFunction f = input_field(cfg);
    const Side side = side_of(cfg, nullptr);
    source = json{{"input", cfg.at("input")}, {"side", to_string(side)}};
    if (!wants("prop31")) throw Error(ErrorKind::usage, "an input field supports only the prop31 suite");
    std::vector<std::size_t> nodes;
    if (cfg.contains("points"))
      for (const Vector& x : probe_points(cfg)) nodes.push_back(f.grid().nearest_node(x));
    const CheckReport r = prop31_check(f, side, nodes, po);
    results["prop31"] = r.to_json();
    files.push_back({"prop31.csv", r.to_csv()});
    pass = r.pass();
  } else {
    const OraclePtr f = fixture_of(cfg);
    const Side side = side_of(cfg, f.get());
    source = json{{"fixture", f->describe()}, {"side", to_string(side)}};
    if (wants("identities")) {
      IdentityOptions io;
      io.tolerance = tol.value("identity", io.tolerance);
      io.gate_tolerance = tol.value("gate", io.gate_tolerance);
      const IdentitySuiteReport r = identity_suite(*f, side, probe_points(cfg), io);
      results["identities"] = r.to_json();
      for (const auto& c : r.checks) files.push_back({"identities_" + file_stem(c.name) + ".csv", c.to_csv()});
      pass = pass && r.pass();
    }
    if (wants("prop31")) {
      const CheckReport r = prop31_check(*f, side, probe_points(cfg), po);
      results["prop31"] = r.to_json();
      files.push_back({"prop31.csv", r.to_csv()});
      pass = pass && r.pass();
    }
    const Vector p = cfg.contains("p") ? vector_from_json(cfg.at("p")) : natural_point(cfg);
    if (wants("functionals")) results["functionals"] = lemma_functionals(f, p, functionals_of(cfg), threads).to_json();
    if (wants("ladder")) {
      const LadderReport r = sec4_ladder(f, p, ladder_of(cfg, {1, 2, 4, 8}), functionals_of(cfg), threads);
      results["ladder"] = r.to_json();
      pass = pass && r.pass();
    }
    if (wants("lemma71")) {
      const json l = cfg.value("lemma71", json::object());
      const Lemma71Result r = lemma71_probe(*f, l.value("delta", 1.0), l.value("Rprime", 3.0), l.value("per_axis", 0));
      json j = r.to_json();
      j["pass"] = r.rho_inverse < r.d5;
      results["lemma71"] = j;
      pass = pass && r.rho_inverse < r.d5;
    }
  }
  const json out{{"command", "verify"}, {"suite", suite}, {"seed", cfg.at("seed")}, {"source", source}, {"results", results}, {"pass", pass}};
  files.insert(files.begin(), Artifact{"verify.json", dump(out)});
  return {json{{"command", "verify"}, {"suite", suite}, {"pass", pass}}, std::move(files)};
}

/// u_k sampled on the lattice of spacing h inside the normalized section {u_k < 1}.
inline std::string section_field_csv(const FieldOracle& w, double h) {
  const int n = w.dim();
  const int k = static_cast<int>(std::floor(1.0 / h));
  std::ostringstream out;
  for (int a = 0; a < n; ++a) out << "eta" << a + 1 << ',';
  out << "value\n";
  std::vector<int> idx(static_cast<std::size_t>(n), -k);
  while (true) {
    Vector eta(n);
    for (int a = 0; a < n; ++a) eta(a) = idx[static_cast<std::size_t>(a)] * h;
    if (eta.norm() <= 1.0 && w.in_domain(eta)) {
      const double v = w.value(eta);
      if (v < 1.0) {
        for (int a = 0; a < n; ++a) out << format_double(eta(a)) << ',';
        out << format_double(v) << '\n';
      }
    }
    int a = 0;
    while (a < n && ++idx[static_cast<std::size_t>(a)] > k) idx[static_cast<std::size_t>(a++)] = -k;
    if (a == n) break;
  }
  return out.str();
}

inline RunOutput run_blowup_command(const json& cfg) {
  const OraclePtr f = fixture_of(cfg);
  const json b = cfg.value("blowup", json::object());
  BlowupOptions opt;
  opt.directions = b.value("directions", 0);
  opt.sphere_probes = b.value("sphere_probes", 0);
  opt.functionals = functionals_of(cfg);
  opt.threads = cfg.at("threads");
  const Vector p = cfg.contains("p") ? vector_from_json(cfg.at("p")) : natural_point(cfg);
  const BlowupReport rep = run_blowup(f, p, ladder_of(cfg, {0.1, 0.2, 0.3}), opt);
  json out = rep.to_json();
  out["command"] = "blowup";
  out["fixture"] = f->describe();
  std::vector<Artifact> files{{"blowup.json", dump(out)}};
  if (b.value("dump_fields", false))
    for (std::size_t k = 0; k < rep.records.size(); ++k)
      files.push_back({"blowup_field_" + std::to_string(k) + ".csv", section_field_csv(*rep.records[k].section.normalized, b.value("field_h", 1.0 / 32))});
  return {json{{"command", "blowup"}, {"records", rep.records.size()}, {"scaling_ok", rep.scaling_ok()}, {"normal_map_ok", rep.normal_map_ok()}},
          std::move(files)};
}

}  // namespace detail

/// Runs a config already passed through validate_config.
inline RunOutput run(const json& cfg) {
  const std::string command = cfg.at("command");
  if (command == "catalog") return detail::run_catalog(cfg);
  if (command == "solve") return detail::run_solve(cfg);
  if (command == "geometry") return detail::run_geometry(cfg);
  if (command == "verify") return detail::run_verify(cfg);
  return detail::run_blowup_command(cfg);
}

/// Writes each artifact to a temporary name in `dir`, then renames it into place.
inline void write_artifacts(const std::string& dir, const std::vector<Artifact>& artifacts) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create output directory '" + dir + "'");
  for (const auto& a : artifacts) {
    const fs::path final_path = fs::path(dir) / a.name;
    const fs::path tmp = fs::path(dir) / ("." + a.name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << a.content;
      if (!out) throw Error(ErrorKind::io, "cannot write '" + tmp.string() + "'");
    }
    fs::rename(tmp, final_path, ec);
    if (ec) throw Error(ErrorKind::io, "cannot rename into '" + final_path.string() + "'");
  }
}

}  // namespace malab::cli
