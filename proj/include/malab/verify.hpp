#pragma once

/**
 * @file verify.hpp
 * @brief Numerical checks of the curvature identities, the Phi differential inequality,
 * the barrier-weighted supremum functionals on sections, and the 1/rho probe.
 */

#include "malab/affine_geometry.hpp"

#include <random>
#include <sstream>
#include <unordered_map>

namespace malab {

/// Per-point residuals against one tolerance; pass iff min residual >= -tolerance.
/// Error-type checks store -|error| so the same rule applies.
struct CheckReport {
  std::string name;
  std::string tolerance_name;
  double tolerance = 0.0;
  std::vector<Vector> points;
  std::vector<double> residuals;
  std::size_t skipped = 0;

  void add(const Vector& p, double r) {
    if (!std::isfinite(r)) throw Error(ErrorKind::precondition, name + ": non-finite residual", json{{"point", malab::to_json(p)}});
    points.push_back(p);
    residuals.push_back(r);
  }
  std::optional<std::size_t> argmin() const {
    if (residuals.empty()) return std::nullopt;
    return static_cast<std::size_t>(std::min_element(residuals.begin(), residuals.end()) - residuals.begin());
  }
  double min() const { return residuals.empty() ? 0.0 : *std::min_element(residuals.begin(), residuals.end()); }
  double max() const { return residuals.empty() ? 0.0 : *std::max_element(residuals.begin(), residuals.end()); }
  bool pass() const { return min() >= -tolerance; }

  /// Associative merge of two reports on the same check.
  void merge(const CheckReport& other) {
    points.insert(points.end(), other.points.begin(), other.points.end());
    residuals.insert(residuals.end(), other.residuals.begin(), other.residuals.end());
    skipped += other.skipped;
  }

  json to_json() const {
    const auto am = argmin();
    return json{{"name", name},
                {"tolerance_name", tolerance_name},
                {"tolerance", tolerance},
                {"count", residuals.size()},
                {"skipped", skipped},
                {"min", min()},
                {"max", max()},
                {"argmin", am ? json(*am) : json(nullptr)},
                {"argmin_point", am ? malab::to_json(points[*am]) : json(nullptr)},
                {"pass", pass()}};
  }

  std::string to_csv() const {
    std::ostringstream out;
    const int n = points.empty() ? 0 : static_cast<int>(points.front().size());
    for (int a = 0; a < n; ++a) out << 'x' << a + 1 << ',';
    out << "residual\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (int a = 0; a < n; ++a) out << format_double(points[i](a)) << ',';
      out << format_double(residuals[i]) << '\n';
    }
    return out.str();
  }
};

/// Uniform random points in the box [lo, hi].
inline std::vector<Vector> random_probes(const Vector& lo, const Vector& hi, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    Vector x(lo.size());
    for (Eigen::Index a = 0; a < lo.size(); ++a) x(a) = lo(a) + (hi(a) - lo(a)) * U(rng);
    out.push_back(x);
  }
  return out;
}

// ---------------------------------------------------------------------------
// equation gate

/// Residual of the potential's own equation at x:
///   primal  log det D^2 f - d.x - d0
///   dual    log det D^2 u + d.grad u + d0
inline double pde_residual(const FieldOracle& potential, Side side, const DriftCoefficients& dr, const Vector& x) {
  const Jet j = potential.jet(x);
  const MetricPoint m = detail::metric_point(j, side, x);
  return side == Side::primal ? m.log_det - dr.d.dot(x) - dr.d0 : m.log_det + dr.d.dot(j.gradient) + dr.d0;
}

/// Drift constants of the potential: declared by the oracle, else read off at the first probe.
inline DriftCoefficients infer_drift(const FieldOracle& potential, Side side, const Vector& x) {
  if (auto dr = potential.drift(side)) return *dr;
  const Jet j = potential.jet(x);
  const MetricPoint m = detail::metric_point(j, side, x);
  DriftCoefficients dr;
  if (side == Side::primal) {
    dr.d = m.L;
    dr.d0 = m.log_det - dr.d.dot(x);
  } else {
    dr.d = -m.Ginv * m.L;
    dr.d0 = -m.log_det - dr.d.dot(j.gradient);
  }
  return dr;
}

struct GateResult {
  DriftCoefficients drift;
  double max_residual = 0.0;
};

inline GateResult pde_gate(const FieldOracle& potential, Side side, const std::vector<Vector>& probes, double tol = 1e-8) {
  if (probes.empty()) throw Error(ErrorKind::precondition, "no probe points");
  GateResult g{infer_drift(potential, side, probes.front()), 0.0};
  for (const Vector& x : probes) {
    potential.require(x);
    g.max_residual = std::max(g.max_residual, std::abs(pde_residual(potential, side, g.drift, x)));
  }
  if (!(g.max_residual <= tol))
    throw Error(ErrorKind::precondition, "potential does not solve its equation",
                json{{"max_residual", g.max_residual}, {"tolerance", tol}, {"drift", g.drift.to_json()}});
  return g;
}

// ---------------------------------------------------------------------------
// identities

struct IdentityOptions {
  double h = 1e-3;
  double tolerance = 1e-6;
  double gate_tolerance = 1e-8;
  double scale_C = 4.0;
};

struct IdentitySuiteReport {
  DriftCoefficients drift;
  double gate_residual = 0.0;
  std::vector<CheckReport> checks;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckReport& c) { return c.pass(); });
  }
  double max_error() const {
    double e = 0.0;
    for (const auto& c : checks) e = std::max(e, -c.min());
    return e;
  }
  json to_json() const {
    json cs = json::array();
    for (const auto& c : checks) cs.push_back(c.to_json());
    return json{{"drift", drift.to_json()}, {"gate_residual", gate_residual}, {"checks", cs}, {"max_error", max_error()}, {"pass", pass()}};
  }
};

namespace detail {

/// Divergence-form Laplacian (1/sqrt det G) d_i (sqrt det G G^{ij} d_j phi), with the
/// exact gradient of phi supplied and the outer derivative by differences.
inline double divergence_laplacian(const FieldOracle& potential, Side side, const std::function<Vector(const Vector&, const Jet&)>& grad,
                                   const Vector& x, double h) {
  const auto flux = [&](const Vector& y) -> Vector {
    const Jet j = potential.jet(y);
    const MetricPoint m = metric_point(j, side, y);
    return std::exp(0.5 * m.log_det) * (m.Ginv * grad(y, j));
  };
  const Matrix D = fd_jacobian(flux, x, h);
  const MetricPoint m = metric_point(potential.jet(x), side, x);
  return D.trace() / std::exp(0.5 * m.log_det);
}

/// Gradients, in the coordinates of `side`, of the primal function f and the dual function u.
inline Vector grad_primal_function(Side side, const Vector& y, const Jet& j) {
  return side == Side::primal ? Vector(j.gradient) : Vector(j.hessian * y);
}
inline Vector grad_dual_function(Side side, const Vector& y, const Jet& j) {
  return side == Side::primal ? Vector(j.hessian * y) : Vector(j.gradient);
}

}  // namespace detail

/// Residuals of (a) rho_ij/rho = rho_i rho_j/rho^2 in x-coordinates, (b) Delta rho =
/// (n+4)/2 |grad rho|^2/rho, (c) Delta f = n + (n+2)/(2 rho) <grad rho, grad f>,
/// (d) Delta u = n - (n+2)/(2 rho) <grad rho, grad u>, and (e) Phi of u/C equals C Phi.
/// The Laplacians in (c), (d) use the divergence form, in (b) the first-order form.
inline IdentitySuiteReport identity_suite(const FieldOracle& potential, Side side, const std::vector<Vector>& probes,
                                          const IdentityOptions& opt = {}) {
  const int n = potential.dim();
  const GateResult gate = pde_gate(potential, side, probes, opt.gate_tolerance);
  IdentitySuiteReport rep;
  rep.drift = gate.drift;
  rep.gate_residual = gate.max_residual;
  const char* names[] = {"rho_hessian", "laplacian_rho", "laplacian_f", "laplacian_u", "phi_scaling"};
  for (const char* nm : names) rep.checks.push_back(CheckReport{nm, "identity_tolerance", opt.tolerance, {}, {}, 0});
  const CalabiOperator lap(potential, side, opt.h);

  for (const Vector& x : probes) {
    const Jet j = potential.jet(x);
    const MetricPoint m = detail::metric_point(j, side, x);
    // (a): d_j(rho_i/rho) in x-coordinates is the Kahler Ricci form over (n+2)
    const GeometrySample s = geometry_sample(potential, x, side, opt.h);
    const Matrix Rx = side == Side::primal ? s.KahlerRicci : Matrix(m.Ginv * s.KahlerRicci * m.Ginv);
    rep.checks[0].add(x, -Rx.cwiseAbs().maxCoeff() / (n + 2));

    // (b)
    const ScalarRule rho{[&](const Vector& y) { return detail::metric_point(potential.jet(y), side, y).rho; },
                         [&](const Vector& y) { return detail::metric_point(potential.jet(y), side, y).grad_rho(); }, {}};
    const Vector gr = m.grad_rho();
    const double lhs_b = lap.apply(m, rho, x);
    rep.checks[1].add(x, -std::abs(lhs_b - 0.5 * (n + 4) * gr.dot(m.Ginv * gr) / m.rho));

    // (c), (d)
    const double lf = detail::divergence_laplacian(potential, side, [&](const Vector& y, const Jet& jy) { return detail::grad_primal_function(side, y, jy); }, x, opt.h);
    const double lu = detail::divergence_laplacian(potential, side, [&](const Vector& y, const Jet& jy) { return detail::grad_dual_function(side, y, jy); }, x, opt.h);
    const Vector gf = detail::grad_primal_function(side, x, j), gu = detail::grad_dual_function(side, x, j);
    rep.checks[2].add(x, -std::abs(lf - (n + 0.5 * (n + 2) * gr.dot(m.Ginv * gf) / m.rho)));
    rep.checks[3].add(x, -std::abs(lu - (n - 0.5 * (n + 2) * gr.dot(m.Ginv * gu) / m.rho)));

    // (e)
    Jet scaled = j;
    const double C = opt.scale_C;
    scaled.value /= C;
    scaled.gradient /= C;
    scaled.hessian /= C;
    scaled.third *= 1.0 / C;
    const double phi_c = detail::metric_point(scaled, side, x).Phi;
    rep.checks[4].add(x, -std::abs(phi_c - C * m.Phi) / std::max(1.0, C * m.Phi));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// the Phi inequality

struct Prop31Options {
  double h = 1e-3;
  double tolerance = 1e-4;
  double gate_tolerance = 1e-8;
  double phi_floor = 1e-10;
  double margin = 0.0;  // grid version: default probes keep this depth inside the domain
};

namespace detail {

/// Delta Phi - [n/(n-1)|grad Phi|^2/Phi + (n^2-3n-10)/(2(n-1))<grad Phi, grad log rho>
///              + (n+2)^2/(n-1) Phi^2]
inline double prop31_residual(int n, const MetricPoint& m, const Vector& grad_phi, double lap_phi) {
  const double nn = n;
  const double g2 = grad_phi.dot(m.Ginv * grad_phi);
  const double mixed = grad_phi.dot(m.Ginv * m.grad_log_rho);
  return lap_phi - (nn / (nn - 1) * g2 / m.Phi + (nn * nn - 3 * nn - 10) / (2 * (nn - 1)) * mixed + (nn + 2) * (nn + 2) / (nn - 1) * m.Phi * m.Phi);
}

inline void add_prop31(CheckReport& rep, const Vector& x, double raw, double phi) { rep.add(x, raw / std::max(1.0, phi * phi)); }

}  // namespace detail

/// Residual of the Phi inequality, scaled by max(1, Phi^2); probes with Phi at or below
/// the floor are skipped.  Derivatives of Phi are differences of the exact Phi rule.
inline CheckReport prop31_check(const FieldOracle& potential, Side side, const std::vector<Vector>& probes, const Prop31Options& opt = {}) {
  const int n = potential.dim();
  pde_gate(potential, side, probes, opt.gate_tolerance);
  CheckReport rep{"prop31", "inequality_tolerance", opt.tolerance, {}, {}, 0};
  const CalabiOperator lap(potential, side, opt.h);
  const ScalarRule phi = phi_rule(potential, side);
  for (const Vector& x : probes) {
    const MetricPoint m = detail::metric_point(potential.jet(x), side, x);
    if (m.Phi <= opt.phi_floor) {
      ++rep.skipped;
      continue;
    }
    const Vector gphi = detail::fd_gradient_values(phi.value, x, opt.h);
    detail::add_prop31(rep, x, detail::prop31_residual(n, m, gphi, lap.apply(m, phi, x)), m.Phi);
  }
  return rep;
}

/// Grid version: Phi from finite-difference jets at nodes three layers deep, and its
/// derivatives by central differences of that node field.
inline CheckReport prop31_check(const GridFunction& potential, Side side, std::vector<std::size_t> probe_nodes = {}, const Prop31Options& opt = {}) {
  const Grid& g = potential.grid();
  const int n = g.dim();
  if (probe_nodes.empty())
    for (std::size_t node : g.nodes_of_kind(NodeKind::interior))
      if (g.deep(node, 3) && g.domain().depth(g.point(node)) >= opt.margin) probe_nodes.push_back(node);
  CheckReport rep{"prop31", "inequality_tolerance", opt.tolerance, {}, {}, 0};
  std::unordered_map<std::size_t, MetricPoint> cache;
  auto metric = [&](std::size_t node) -> const MetricPoint& {
    auto it = cache.find(node);
    if (it == cache.end()) {
      if (!g.deep(node, 2)) throw Error(ErrorKind::stencil, "Phi needs a node two layers deep", json{{"node", node}});
      it = cache.emplace(node, detail::metric_point(fd_jet(potential, node), side, g.point(node))).first;
    }
    return it->second;
  };
  const Vector& h = g.spacing();
  for (std::size_t node : probe_nodes) {
    if (!g.deep(node, 3)) throw Error(ErrorKind::stencil, "inequality probes must be three layers deep", json{{"node", node}});
    const MetricPoint& m = metric(node);
    if (m.Phi <= opt.phi_floor) {
      ++rep.skipped;
      continue;
    }
    auto phi_at = [&](int a, int sa, int b, int sb) {
      std::vector<int> off(static_cast<std::size_t>(n), 0);
      if (a >= 0) off[static_cast<std::size_t>(a)] += sa;
      if (b >= 0) off[static_cast<std::size_t>(b)] += sb;
      return metric(*g.neighbor(node, off)).Phi;
    };
    Vector grad(n);
    Matrix hess(n, n);
    for (int a = 0; a < n; ++a) {
      grad(a) = (phi_at(a, 1, -1, 0) - phi_at(a, -1, -1, 0)) / (2 * h(a));
      hess(a, a) = (phi_at(a, 1, -1, 0) - 2 * m.Phi + phi_at(a, -1, -1, 0)) / (h(a) * h(a));
      for (int b = a + 1; b < n; ++b)
        hess(a, b) = hess(b, a) = (phi_at(a, 1, b, 1) - phi_at(a, 1, b, -1) - phi_at(a, -1, b, 1) + phi_at(a, -1, b, -1)) / (4 * h(a) * h(b));
    }
    const double lap = m.Ginv.cwiseProduct(hess).sum() + detail::side_sign(side) * 0.5 * (n + 2) * m.grad_log_rho.dot(m.Ginv * grad);
    detail::add_prop31(rep, g.point(node), detail::prop31_residual(n, m, grad, lap), m.Phi);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// sections

namespace detail {

/// Distance t > 0 along the unit direction `dir` from the origin at which v reaches C.
inline double section_radius(const FieldOracle& v, const Vector& dir, double C, double rel_tol = 1e-8) {
  double lo = 0.0, hi = 1e-2;
  bool bracketed = false;
  for (int it = 0; it < 200; ++it) {
    const Vector y = hi * dir;
    if (!v.in_domain(y)) break;
    if (v.value(y) >= C) {
      bracketed = true;
      break;
    }
    lo = hi;
    hi *= 2.0;
    if (hi > 1e12) throw Error(ErrorKind::unbounded_section, "section is unbounded along a ray", json{{"direction", to_json(dir)}, {"level", C}});
  }
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    const Vector y = mid * dir;
    if (!v.in_domain(y)) {
      hi = mid;
      continue;
    }
    const double val = v.value(y);
    if (val >= C) bracketed = true;
    if (std::abs(val - C) <= rel_tol * C) return mid;
    (val < C ? lo : hi) = mid;
    if (hi - lo <= 1e-15 * hi) break;
  }
  if (!bracketed)
    throw Error(ErrorKind::unbounded_section, "ray leaves the oracle domain before reaching the level",
                json{{"direction", to_json(dir)}, {"level", C}, {"exit_distance", hi}});
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Points where v = C along `count` directions from the origin (v(0) = 0 the minimum).
inline std::vector<Vector> section_boundary(const FieldOracle& v, double C, int count, int threads = 1) {
  if (!(C > 0)) throw Error(ErrorKind::precondition, "section level must be positive");
  const auto dirs = sphere_directions(v.dim(), count);
  std::vector<Vector> pts(dirs.size());
  parallel_for(dirs.size(), threads, [&](std::size_t i) { pts[i] = detail::section_radius(v, dirs[i], C) * dirs[i]; });
  return pts;
}

// ---------------------------------------------------------------------------
// supremum functionals

struct ProofFunctionals {
  double C = 1.0;
  std::optional<double> m_sec4;   // default 8(n-1)C
  std::optional<double> m_lemma61;  // default 32(n+2)C
  std::optional<double> m_lemma63;  // default 64(n-1)C
  std::optional<double> d;        // default: doubling search
  std::optional<double> b;        // default 4 n^3
  std::optional<double> epsilon;  // default (1/30)/max ratio
  int probes_per_axis = 0;        // default 201 (n=2), 41 (n=3), 15 otherwise
  int directions = 0;             // default 128 (n=2), 512 otherwise

  static double alpha(int n) { return (n + 2.0) * (n - 3.0) / 2.0 + (n - 1.0) / 4.0; }
};

struct SupRecord {
  double value = 0.0;
  Vector point;
  double level = 0.0;  // v / C at the maximizer

  json to_json() const { return json{{"value", value}, {"point", point.size() ? malab::to_json(point) : json(nullptr)}, {"level", level}}; }
};

struct FunctionalsReport {
  double C = 0.0, m_sec4 = 0.0, m_lemma61 = 0.0, m_lemma63 = 0.0;
  double alpha = 0.0, d = 0.0, b = 0.0, epsilon = 0.0;
  std::size_t probes = 0;
  SupRecord L_sec4, A, B, F63, ratio51;
  double max_H = 0.0;
  double max_ratio_5_10 = 0.0;
  // plain suprema over the same probes
  double max_Phi = 0.0, max_rho = 0.0, max_rho_alpha_Phi = 0.0, max_rho_alpha_trace = 0.0;

  json to_json() const {
    return json{{"C", C},           {"m_sec4", m_sec4}, {"m_lemma61", m_lemma61}, {"m_lemma63", m_lemma63}, {"alpha", alpha},
                {"d", d},           {"b", b},           {"epsilon", epsilon},     {"probes", probes},       {"L_sec4", L_sec4.to_json()},
                {"A", A.to_json()}, {"B", B.to_json()}, {"F63", F63.to_json()},   {"ratio51", ratio51.to_json()},
                {"max_H", max_H},   {"max_ratio_5_10", max_ratio_5_10}, {"max_Phi", max_Phi}, {"max_rho", max_rho},
                {"max_rho_alpha_Phi", max_rho_alpha_Phi}, {"max_rho_alpha_trace", max_rho_alpha_trace}};
  }
};

namespace detail {

/// What the functionals need at one section point (coordinates relative to p).
struct SectionProbe {
  Vector y;
  double v = 0.0;
  double x2 = 0.0;  // sum x_k^2, x = grad v
  double f = 0.0;   // Legendre transform y.x - v
  double rho = 0.0;
  double Phi = 0.0;
  double trace = 0.0;  // sum v_ii
};

inline SectionProbe section_probe(const Vector& y, const Jet& j) {
  const MetricPoint m = metric_point(j, Side::dual, y);
  return SectionProbe{y, j.value, j.gradient.squaredNorm(), y.dot(j.gradient) - j.value, m.rho, m.Phi, j.hessian.trace()};
}

inline FunctionalsReport evaluate_functionals(int n, const std::vector<SectionProbe>& probes, const ProofFunctionals& params) {
  if (probes.empty()) throw Error(ErrorKind::window, "no probe points inside the section");
  const double C = params.C;
  FunctionalsReport r;
  r.C = C;
  r.m_sec4 = params.m_sec4.value_or(8.0 * (n - 1) * C);
  r.m_lemma61 = params.m_lemma61.value_or(32.0 * (n + 2) * C);
  r.m_lemma63 = params.m_lemma63.value_or(64.0 * (n - 1) * C);
  r.alpha = ProofFunctionals::alpha(n);
  r.b = params.b.value_or(4.0 * n * n * n);
  r.probes = probes.size();

  auto admissible = [&](double d) {
    for (const auto& p : probes) {
      if (!(d + p.f > 0)) return false;
      if (p.x2 / ((d + p.f) * (d + p.f)) > r.b) return false;
      if (std::abs(p.v + p.f) / (d + p.f) > 1.0) return false;
    }
    return true;
  };
  if (params.d) {
    r.d = *params.d;
    if (!(r.d > 1.0)) throw Error(ErrorKind::precondition, "shift constant d must exceed 1");
  } else {
    r.d = 2.0;
    while (!admissible(r.d)) {
      r.d *= 2.0;
      if (r.d > 1e12) throw Error(ErrorKind::precondition, "no shift constant d satisfies the ratio bound");
    }
  }
  double max_ratio = 0.0;
  for (const auto& p : probes) max_ratio = std::max(max_ratio, p.x2 / ((r.d + p.f) * (r.d + p.f)));
  r.epsilon = params.epsilon.value_or(max_ratio > 0 ? (1.0 / 30.0) / max_ratio : 1.0);

  const double a = r.alpha, pw = 2.0 * n * a / (n + 2.0);
  auto consider = [&](SupRecord& s, double value, const SectionProbe& p) {
    if (s.point.size() == 0 || value > s.value) s = SupRecord{value, p.y, p.v / C};
  };
  for (const auto& p : probes) {
    const double gap = C - p.v;
    const double df = r.d + p.f;
    const double ratio = p.x2 / (df * df);
    const double H = r.epsilon * ratio;
    const double h61 = r.m_lemma61 / (gap * gap);
    const double rho_a = std::pow(p.rho, a);
    consider(r.L_sec4, std::exp(-r.m_sec4 / gap) * p.Phi, p);
    consider(r.A, std::exp(-r.m_lemma61 / gap) * rho_a * p.Phi / std::pow(df, pw), p);
    consider(r.B, std::exp(-r.m_lemma61 / gap + H) * (h61 + 2 * a) * rho_a / std::pow(df, pw), p);
    consider(r.F63, std::exp(-r.m_lemma63 / gap) * rho_a * p.trace / std::pow(df, pw + 2), p);
    consider(r.ratio51, ratio, p);
    r.max_H = std::max(r.max_H, H);
    r.max_ratio_5_10 = std::max(r.max_ratio_5_10, std::abs(p.v + p.f) / df);
    r.max_Phi = std::max(r.max_Phi, p.Phi);
    r.max_rho = std::max(r.max_rho, p.rho);
    r.max_rho_alpha_Phi = std::max(r.max_rho_alpha_Phi, rho_a * p.Phi);
    r.max_rho_alpha_trace = std::max(r.max_rho_alpha_trace, rho_a * p.trace);
  }
  return r;
}

inline int default_probes_per_axis(int n) { return n == 2 ? 201 : n == 3 ? 41 : 15; }
inline int default_directions(int n) { return n == 2 ? 128 : 512; }

}  // namespace detail

/// Suprema of the barrier-weighted functionals over a dense probe grid of the section
/// {v < C}, v the dual potential u normalized at p (minimum 0 at the origin).
inline FunctionalsReport lemma_functionals(OraclePtr u, const Vector& p, const ProofFunctionals& params, int threads = 1) {
  const int n = u->dim();
  u->require(p);
  const NormalizedOracle v(u, p);
  const int dirs = params.directions > 0 ? params.directions : detail::default_directions(n);
  std::vector<Vector> boundary;
  try {
    boundary = section_boundary(v, params.C, dirs, threads);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::unbounded_section) throw;
    throw Error(ErrorKind::window, "section is not compactly contained in the oracle domain", e.details());
  }
  Vector lo = boundary.front(), hi = boundary.front();
  for (const Vector& b : boundary) {
    lo = lo.cwiseMin(b);
    hi = hi.cwiseMax(b);
  }
  const Vector pad = 0.02 * (hi - lo);
  lo -= pad;
  hi += pad;
  const int k = params.probes_per_axis > 0 ? params.probes_per_axis : detail::default_probes_per_axis(n);
  std::size_t total = 1;
  for (int a = 0; a < n; ++a) total *= static_cast<std::size_t>(k);
  std::vector<std::optional<detail::SectionProbe>> slots(total);
  parallel_for(total, threads, [&](std::size_t idx) {
    Vector y(n);
    std::size_t rest = idx;
    for (int a = 0; a < n; ++a) {
      y(a) = lo(a) + (hi(a) - lo(a)) * static_cast<double>(rest % static_cast<std::size_t>(k)) / (k - 1);
      rest /= static_cast<std::size_t>(k);
    }
    if (!v.in_domain(y)) return;
    const Jet j = v.jet(y);
    if (!(j.value < params.C)) return;
    slots[idx] = detail::section_probe(y, j);
  });
  std::vector<detail::SectionProbe> probes;
  for (auto& s : slots)
    if (s) probes.push_back(std::move(*s));
  return detail::evaluate_functionals(n, probes, params);
}

/// Grid version on a sampled dual potential: v = u - u(p) - grad u(p).(xi - p) with the
/// gradient from finite differences; every node of the section must carry third-derivative
/// stencils.
inline FunctionalsReport lemma_functionals(const GridFunction& u, std::size_t p_node, const ProofFunctionals& params) {
  const Grid& g = u.grid();
  const int n = g.dim();
  const Jet jp = fd_jet(u, p_node);
  const Vector p = g.point(p_node);
  std::vector<detail::SectionProbe> probes;
  for (std::size_t node = 0; node < g.size(); ++node) {
    if (g.kind(node) == NodeKind::outside) continue;
    const Vector y = g.point(node) - p;
    const double v = u[node] - jp.value - jp.gradient.dot(y);
    if (!(v < params.C)) continue;
    if (!g.deep(node, 2)) throw Error(ErrorKind::window, "section reaches the edge of the sampled window", json{{"node", node}});
    Jet j = fd_jet(u, node);
    j.value = v;
    j.gradient -= jp.gradient;
    probes.push_back(detail::section_probe(y, j));
  }
  return detail::evaluate_functionals(n, probes, params);
}

struct LadderReport {
  std::vector<FunctionalsReport> levels;
  double observed_b = 0.0;
  bool decreasing = false;
  bool within_factor_2 = false;

  bool pass() const { return decreasing && within_factor_2; }
  json to_json() const {
    json ls = json::array();
    for (const auto& l : levels) ls.push_back(json{{"C", l.C}, {"sup_L_sec4", l.L_sec4.value}, {"bound", observed_b / l.C}, {"point", l.L_sec4.to_json()}});
    return json{{"levels", ls}, {"observed_b", observed_b}, {"decreasing", decreasing}, {"within_factor_2", within_factor_2}, {"pass", pass()}};
  }
};

/// sup L over an increasing ladder of levels: b is fixed from the first level as
/// sup L(C_1) * C_1, then each level must satisfy sup L(C) <= 2 b / C and the suprema
/// must decrease.
inline LadderReport sec4_ladder(OraclePtr u, const Vector& p, const std::vector<double>& levels, ProofFunctionals params = {}, int threads = 1) {
  if (levels.empty()) throw Error(ErrorKind::precondition, "empty ladder");
  LadderReport rep;
  for (double C : levels) {
    params.C = C;
    params.m_sec4.reset();
    params.m_lemma61.reset();
    params.m_lemma63.reset();
    rep.levels.push_back(lemma_functionals(u, p, params, threads));
  }
  rep.observed_b = rep.levels.front().L_sec4.value * rep.levels.front().C;
  rep.decreasing = true;
  rep.within_factor_2 = true;
  for (std::size_t i = 0; i < rep.levels.size(); ++i) {
    const auto& l = rep.levels[i];
    if (i > 0 && !(l.L_sec4.value < rep.levels[i - 1].L_sec4.value)) rep.decreasing = false;
    if (!(l.L_sec4.value <= 2.0 * rep.observed_b / l.C)) rep.within_factor_2 = false;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// the 1/rho probe

/// d5 = (4 R'/delta^2)^{n/(n+2)} 2^{(n+1)/(n+2)}.
inline double lemma71_bound(int n, double delta, double Rprime) {
  return std::pow(4.0 * Rprime / (delta * delta), n / (n + 2.0)) * std::pow(2.0, (n + 1.0) / (n + 2.0));
}

struct Lemma71Result {
  Vector point;
  double rho_inverse = 0.0;
  double d5 = 0.0;
  double max_abs_f = 0.0;

  json to_json() const { return json{{"point", malab::to_json(point)}, {"rho_inverse", rho_inverse}, {"d5", d5}, {"max_abs_f", max_abs_f}}; }
};

/// Searches the ball |x| < delta for a point with 1/rho = det(D^2 f)^{1/(n+2)} below d5,
/// by coarse-to-fine grid descent.  Probes |f| <= R' on the same grids first.
inline Lemma71Result lemma71_probe(const FieldOracle& f, double delta, double Rprime, int per_axis = 0) {
  const int n = f.dim();
  if (!(delta > 0) || !(Rprime > 0)) throw Error(ErrorKind::precondition, "delta and R' must be positive");
  const int k = per_axis > 0 ? per_axis : (n == 2 ? 41 : n == 3 ? 15 : 7);
  Lemma71Result res;
  res.d5 = lemma71_bound(n, delta, Rprime);
  auto inv_rho = [&](const Vector& x) {
    const Jet j = f.jet(x);
    return std::exp(detail::metric_point(j, Side::primal, x).log_det / (n + 2));
  };
  auto scan = [&](const Vector& center, double half, bool check_bound) {
    std::size_t total = 1;
    for (int a = 0; a < n; ++a) total *= static_cast<std::size_t>(k);
    std::optional<std::pair<double, Vector>> best;
    for (std::size_t idx = 0; idx < total; ++idx) {
      Vector x(n);
      std::size_t rest = idx;
      for (int a = 0; a < n; ++a) {
        x(a) = center(a) - half + 2.0 * half * static_cast<double>(rest % static_cast<std::size_t>(k)) / (k - 1);
        rest /= static_cast<std::size_t>(k);
      }
      if (!(x.norm() < delta)) continue;
      f.require(x);
      if (check_bound) {
        const double fx = f.value(x);
        res.max_abs_f = std::max(res.max_abs_f, std::abs(fx));
        if (std::abs(fx) > Rprime)
          throw Error(ErrorKind::precondition, "|f| exceeds R' on the ball", json{{"point", to_json(x)}, {"value", fx}, {"Rprime", Rprime}});
      }
      const double r = inv_rho(x);
      if (!best || r < best->first) best = std::make_pair(r, x);
    }
    return best;
  };
  auto best = scan(Vector::Zero(n), delta, true);
  // a few points on the sphere for the bound check
  for (const Vector& dir : sphere_directions(n, 64)) {
    const Vector x = (delta * (1 - 1e-12)) * dir;
    f.require(x);
    const double fx = f.value(x);
    res.max_abs_f = std::max(res.max_abs_f, std::abs(fx));
    if (std::abs(fx) > Rprime)
      throw Error(ErrorKind::precondition, "|f| exceeds R' on the ball", json{{"point", to_json(x)}, {"value", fx}, {"Rprime", Rprime}});
  }
  if (!best) throw Error(ErrorKind::precondition, "probe grid misses the ball");
  double half = delta;
  for (int level = 0; level < 6; ++level) {
    half *= 2.0 / (k - 1);
    if (auto b = scan(best->second, half, false); b && b->first < best->first) best = b;
  }
  res.point = best->second;
  res.rho_inverse = best->first;
  if (!(res.rho_inverse < res.d5))
    throw Error(ErrorKind::counterexample, "no point with 1/rho below d5", json{{"best", res.rho_inverse}, {"d5", res.d5}});
  return res;
}

}  // namespace malab
