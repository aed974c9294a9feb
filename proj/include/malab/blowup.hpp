#pragma once

/**
 * @file blowup.hpp
 * @brief Sections of a dual potential, their ellipsoid normalization, and the rescaled
 * sequence u_k(eta) = v(T_k^{-1} eta - p) / C_k along a ladder of levels.
 *
 * v is the potential normalized at p (minimum 0 there).  Section points and T_k act on
 * the original xi coordinates.
 */

#include "malab/verify.hpp"

namespace malab {

struct SectionData {
  Vector p;
  double C = 0.0;
  std::vector<Vector> boundary;  // points with v = C, in xi coordinates
  double max_level_error = 0.0;  // max |v - C| / C over the boundary points
  ConvexDomain polytope;         // tangent half-spaces at the boundary points
  NormalizedDomain normalization;
  OraclePtr normalized;  // the rescaled potential on the normalized domain

  const AffineMap& T() const noexcept { return normalization.map; }
  Vector image_of_p() const { return T().apply(p); }

  json to_json() const {
    json pts = json::array();
    for (const auto& b : boundary) pts.push_back(malab::to_json(b));
    return json{{"p", malab::to_json(p)},
                {"C", C},
                {"boundary", pts},
                {"max_level_error", max_level_error},
                {"T", T().to_json()},
                {"inner_radius", normalization.inner_radius},
                {"outer_radius", normalization.outer_radius}};
  }
};

namespace detail {

inline int default_section_directions(int n) { return n == 2 ? 128 : 512; }

}  // namespace detail

/// Section {v < C} of u normalized at p: boundary by ray bisection, circumscribed by the
/// tangent half-spaces of v at the boundary points, then normalized by its centered MVEE.
inline SectionData extract_section(OraclePtr u, const Vector& p, double C, int directions = 0, int threads = 1) {
  const int n = u->dim();
  if (n != 2 && n != 3) throw Error(ErrorKind::precondition, "sections are supported for n = 2 and n = 3", json{{"n", n}});
  if (!(C > 0)) throw Error(ErrorKind::precondition, "section level must be positive");
  u->require(p);
  const auto v = std::make_shared<const NormalizedOracle>(u, p);
  const auto ys = section_boundary(*v, C, directions > 0 ? directions : detail::default_section_directions(n), threads);
  std::vector<Vector> boundary;
  std::vector<Halfspace> hs;
  double level_error = 0.0;
  for (const Vector& y : ys) {
    const Jet j = v->jet(y);
    level_error = std::max(level_error, std::abs(j.value - C) / C);
    boundary.push_back(p + y);
    hs.push_back(Halfspace{j.gradient, j.gradient.dot(p + y)});
  }
  ConvexDomain poly = ConvexDomain::polytope(std::move(hs));
  NormalizedDomain nd = normalize_domain(poly, 1e-6);
  const AffineMap inv = nd.map.inverse();
  OraclePtr uk = std::make_shared<const RescaledOracle>(v, inv.linear(), Vector(inv.offset() - p), 1.0 / C);
  return SectionData{p, C, std::move(boundary), level_error, std::move(poly), std::move(nd), std::move(uk)};
}

struct NormalMapCheck {
  double R = 0.0;  // max distance from T(p) to the half-section boundary
  double r = 0.0;  // 1 / (2R)
  int directions = 0;
  double max_gradient_mismatch = 0.0;
  double min_level_margin = 0.0;  // min over probes of 1/2 - u_k at the preimage
  bool pass = false;

  json to_json() const {
    return json{{"R", R}, {"r", r}, {"directions", directions}, {"max_gradient_mismatch", max_gradient_mismatch},
                {"min_level_margin", min_level_margin}, {"pass", pass}};
  }
};

namespace detail {

/// Minimizer of w(eta) - a.eta by damped Newton from `start`; its gradient equals a.
inline std::optional<Vector> gradient_preimage(const FieldOracle& w, const Vector& a, Vector eta, double tol = 1e-11) {
  auto objective = [&](const Vector& y) { return w.value(y) - a.dot(y); };
  double obj = objective(eta);
  for (int it = 0; it < 200; ++it) {
    const Jet j = w.jet(eta);
    const Vector g = j.gradient - a;
    if (g.norm() <= tol * std::max(1.0, a.norm())) return eta;
    const Vector step = -symmetrize(j.hessian).llt().solve(g);
    bool moved = false;
    for (double t = 1.0; t > 1e-12; t *= 0.5) {
      const Vector trial = eta + t * step;
      if (!w.in_domain(trial)) continue;
      const double o = objective(trial);
      // near the solution the objective is flat to rounding; fall back to the gradient norm
      const bool flat = o <= obj + 1e-13 * (1.0 + std::abs(obj)) && (w.jet(trial).gradient - a).norm() < 0.5 * g.norm();
      if (o <= obj + 1e-4 * t * g.dot(step) || flat) {
        eta = trial;
        obj = o;
        moved = true;
        break;
      }
    }
    if (!moved) return g.norm() <= 1e3 * tol * std::max(1.0, a.norm()) ? std::optional<Vector>(eta) : std::nullopt;
  }
  return std::nullopt;
}

}  // namespace detail

/// Every a on the sphere of radius 1/(2R) is a gradient value of w inside {w < 1/2},
/// where w has its minimum 0 at q and R bounds the distance from q to {w = 1/2}.
inline NormalMapCheck normal_map_check(const FieldOracle& w, const Vector& q, int directions = 0, int threads = 1) {
  const int n = w.dim();
  NormalMapCheck c;
  const auto half = section_boundary(NormalizedOracle(std::shared_ptr<const FieldOracle>(&w, [](const FieldOracle*) {}), q), 0.5,
                                     detail::default_section_directions(n), threads);
  for (const Vector& y : half) c.R = std::max(c.R, y.norm());
  c.r = 1.0 / (2.0 * c.R);
  const auto dirs = sphere_directions(n, directions > 0 ? directions : (n == 2 ? 64 : 256));
  c.directions = static_cast<int>(dirs.size());
  std::vector<double> mismatch(dirs.size(), std::numeric_limits<double>::infinity()), margin(dirs.size(), -1.0);
  parallel_for(dirs.size(), threads, [&](std::size_t i) {
    const Vector a = c.r * dirs[i];
    const auto eta = detail::gradient_preimage(w, a, q);
    if (!eta) return;
    const Jet j = w.jet(*eta);
    mismatch[i] = (j.gradient - a).norm();
    margin[i] = 0.5 - j.value;
  });
  c.min_level_margin = *std::min_element(margin.begin(), margin.end());
  c.max_gradient_mismatch = *std::max_element(mismatch.begin(), mismatch.end());
  c.pass = c.min_level_margin > 0 && c.max_gradient_mismatch <= 1e-8 * std::max(1.0, c.r);
  return c;
}

struct BlowupOptions {
  int directions = 0;         // section rays; default 128 (n=2) / 512 (n=3)
  int sphere_probes = 0;      // normal-map probes; default 64 (n=2) / 256 (n=3)
  ProofFunctionals functionals;  // its C is replaced by the half level 1/2
  int threads = 1;
};

struct BlowupRecord {
  SectionData section;
  FunctionalsReport half;  // functionals of u_k on {u_k < 1/2}
  double running_max_rho = 0.0, running_max_rho_alpha_Phi = 0.0, running_max_rho_alpha_trace = 0.0;
  double phi_at_image = 0.0;
  double phi_expected = 0.0;  // C_k Phi(p)
  double scaling_error = 0.0;  // relative
  NormalMapCheck normal_map;

  json to_json() const {
    return json{{"C", section.C},
                {"T", section.T().to_json()},
                {"image_of_p", malab::to_json(section.image_of_p())},
                {"section", json{{"max_level_error", section.max_level_error},
                                 {"inner_radius", section.normalization.inner_radius},
                                 {"outer_radius", section.normalization.outer_radius},
                                 {"boundary_points", section.boundary.size()}}},
                {"sup_Phi", half.max_Phi},
                {"sup_A", half.A.value},
                {"sup_B", half.B.value},
                {"sup_F63", half.F63.value},
                {"half_section", half.to_json()},
                {"running_max", json{{"rho", running_max_rho}, {"rho_alpha_Phi", running_max_rho_alpha_Phi}, {"rho_alpha_trace", running_max_rho_alpha_trace}}},
                {"phi_at_image", phi_at_image},
                {"phi_expected", phi_expected},
                {"scaling_error", scaling_error},
                {"normal_map", normal_map.to_json()}};
  }
};

struct BlowupReport {
  Vector p;
  double phi_p = 0.0;
  std::vector<BlowupRecord> records;

  double max_scaling_error() const {
    double e = 0.0;
    for (const auto& r : records) e = std::max(e, r.scaling_error);
    return e;
  }
  double max_sup_Phi() const {
    double e = 0.0;
    for (const auto& r : records) e = std::max(e, r.half.max_Phi);
    return e;
  }
  bool scaling_ok(double tol = 1e-6) const { return max_scaling_error() <= tol; }
  bool normal_map_ok() const {
    return std::all_of(records.begin(), records.end(), [](const BlowupRecord& r) { return r.normal_map.pass; });
  }

  json to_json() const {
    json recs = json::array();
    for (const auto& r : records) recs.push_back(r.to_json());
    return json{{"p", malab::to_json(p)},
                {"Phi_p", phi_p},
                {"records", recs},
                {"max_scaling_error", max_scaling_error()},
                {"max_sup_Phi", max_sup_Phi()},
                {"scaling_ok", scaling_ok()},
                {"normal_map_ok", normal_map_ok()}};
  }
};

/// Runs the rescaling along an increasing ladder of levels.  Section errors propagate.
inline BlowupReport run_blowup(OraclePtr u, const Vector& p, const std::vector<double>& ladder, const BlowupOptions& opt = {}) {
  if (ladder.empty()) throw Error(ErrorKind::precondition, "empty ladder");
  for (std::size_t k = 0; k < ladder.size(); ++k)
    if (!(ladder[k] > 0) || (k > 0 && !(ladder[k] > ladder[k - 1])))
      throw Error(ErrorKind::precondition, "ladder must be positive and strictly increasing");
  BlowupReport rep;
  rep.p = p;
  rep.phi_p = geometry_sample(*u, p, Side::dual).Phi;
  ProofFunctionals half = opt.functionals;
  half.C = 0.5;
  for (double C : ladder) {
    BlowupRecord rec{extract_section(u, p, C, opt.directions, opt.threads), {}, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, {}};
    const OraclePtr& uk = rec.section.normalized;
    const Vector q = rec.section.image_of_p();
    rec.half = lemma_functionals(uk, q, half, opt.threads);
    const BlowupRecord* prev = rep.records.empty() ? nullptr : &rep.records.back();
    rec.running_max_rho = std::max(rec.half.max_rho, prev ? prev->running_max_rho : 0.0);
    rec.running_max_rho_alpha_Phi = std::max(rec.half.max_rho_alpha_Phi, prev ? prev->running_max_rho_alpha_Phi : 0.0);
    rec.running_max_rho_alpha_trace = std::max(rec.half.max_rho_alpha_trace, prev ? prev->running_max_rho_alpha_trace : 0.0);
    rec.phi_at_image = geometry_sample(*uk, q, Side::dual).Phi;
    rec.phi_expected = C * rep.phi_p;
    rec.scaling_error = std::abs(rec.phi_at_image - rec.phi_expected) / std::max(rec.phi_expected, 1e-300);
    if (rec.phi_expected == 0.0) rec.scaling_error = std::abs(rec.phi_at_image);
    rec.normal_map = normal_map_check(*uk, q, opt.sphere_probes, opt.threads);
    rep.records.push_back(std::move(rec));
  }
  return rep;
}

}  // namespace malab
