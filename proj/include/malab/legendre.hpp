#pragma once

/**
 * @file legendre.hpp
 * @brief Pointwise Legendre transform of oracles and the discrete convex conjugate.
 */

#include "malab/oracle.hpp"

namespace malab {

struct LegendrePoint {
  Vector xi;
  double u = 0.0;
};

/// xi = grad f(x), u = <x, grad f(x)> - f(x).
inline LegendrePoint legendre_point(const FieldOracle& f, const Vector& x) {
  const Jet j = f.jet(x);
  const double lam = Eigen::SelfAdjointEigenSolver<Matrix>(j.hessian, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  if (!(lam > 1e-14 * std::max(1.0, j.hessian.norm())))
    throw Error(ErrorKind::degeneracy, "Hessian is singular at the transform point", json{{"point", to_json(x)}, {"min_eigenvalue", lam}});
  return LegendrePoint{j.gradient, x.dot(j.gradient) - j.value};
}

/// Discrete conjugate on every node of a rectangular dual grid (mask ignored) with a
/// flag marking nodes whose maximizer was pinned to the edge of the sampling window.
struct DiscreteConjugate {
  std::vector<double> values;
  std::vector<unsigned char> clipped;

  std::vector<std::size_t> clipped_nodes(const Grid& dual) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < clipped.size(); ++i)
      if (clipped[i] && dual.kind(i) != NodeKind::outside) out.push_back(i);
    return out;
  }
};

namespace detail {

/// max_j (x_j s - v_j) for ascending slopes s, over the finite points (x_j, v_j) with
/// ascending x_j.  A result is clipped when s lies outside the hull slope range or the
/// maximizing point was itself clipped.
inline void conjugate_line(const std::vector<double>& x, const std::vector<double>& v, const std::vector<unsigned char>& vflag,
                           const std::vector<double>& s, std::vector<double>& out, std::vector<unsigned char>& oflag) {
  std::vector<std::size_t> hull;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!std::isfinite(v[j])) continue;
    while (hull.size() >= 2) {
      const std::size_t a = hull[hull.size() - 2], b = hull.back();
      // drop b when it lies on or above the chord a-j
      if ((v[b] - v[a]) * (x[j] - x[a]) >= (v[j] - v[a]) * (x[b] - x[a])) {
        hull.pop_back();
      } else {
        break;
      }
    }
    hull.push_back(j);
  }
  out.assign(s.size(), -std::numeric_limits<double>::infinity());
  oflag.assign(s.size(), 1);
  if (hull.empty()) return;
  auto slope = [&](std::size_t k) { return (v[hull[k + 1]] - v[hull[k]]) / (x[hull[k + 1]] - x[hull[k]]); };
  const double lo = hull.size() > 1 ? slope(0) : std::numeric_limits<double>::infinity();
  const double hi = hull.size() > 1 ? slope(hull.size() - 2) : -std::numeric_limits<double>::infinity();
  std::size_t k = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    while (k + 1 < hull.size() && slope(k) < s[i]) ++k;
    const std::size_t j = hull[k];
    out[i] = x[j] * s[i] - v[j];
    const double tol = 1e-12 * (1.0 + std::abs(s[i]));
    oflag[i] = static_cast<unsigned char>(vflag[j] || s[i] < lo - tol || s[i] > hi + tol);
  }
}

}  // namespace detail

/// u(xi) = max over non-outside nodes x of [<x, xi> - f(x)], computed one axis at a time.
inline DiscreteConjugate discrete_conjugate(const GridFunction& f, const Grid& dual, int threads = 1) {
  const Grid& g = f.grid();
  const int n = g.dim();
  if (dual.dim() != n) throw Error(ErrorKind::precondition, "dual grid dimension mismatch");
  std::vector<std::size_t> shape(g.resolution().begin(), g.resolution().end());
  std::vector<double> w(g.size());
  std::vector<unsigned char> flag(g.size(), 0);
  for (std::size_t i = 0; i < g.size(); ++i) w[i] = g.kind(i) == NodeKind::outside ? std::numeric_limits<double>::infinity() : f[i];

  for (int a = 0; a < n; ++a) {
    const std::size_t in_len = shape[static_cast<std::size_t>(a)];
    const std::size_t out_len = static_cast<std::size_t>(dual.resolution()[static_cast<std::size_t>(a)]);
    std::vector<double> xs(in_len), ss(out_len);
    for (std::size_t j = 0; j < in_len; ++j) xs[j] = g.lo()(a) + static_cast<double>(j) * g.spacing()(a);
    for (std::size_t j = 0; j < out_len; ++j) ss[j] = dual.lo()(a) + static_cast<double>(j) * dual.spacing()(a);
    // strides of the current array (axis 0 fastest)
    std::size_t inner = 1;
    for (int b = 0; b < a; ++b) inner *= shape[static_cast<std::size_t>(b)];
    std::size_t outer = 1;
    for (int b = a + 1; b < n; ++b) outer *= shape[static_cast<std::size_t>(b)];
    std::vector<double> w2(inner * out_len * outer);
    std::vector<unsigned char> flag2(w2.size());
    parallel_for(inner * outer, threads, [&](std::size_t line) {
      const std::size_t lo_idx = line % inner, hi_idx = line / inner;
      std::vector<double> v(in_len), out;
      std::vector<unsigned char> vf(in_len), of;
      for (std::size_t j = 0; j < in_len; ++j) {
        v[j] = w[lo_idx + inner * (j + in_len * hi_idx)];
        vf[j] = flag[lo_idx + inner * (j + in_len * hi_idx)];
      }
      detail::conjugate_line(xs, v, vf, ss, out, of);
      for (std::size_t j = 0; j < out_len; ++j) {
        // the next pass conjugates -g
        w2[lo_idx + inner * (j + out_len * hi_idx)] = -out[j];
        flag2[lo_idx + inner * (j + out_len * hi_idx)] = of[j];
      }
    });
    w.swap(w2);
    flag.swap(flag2);
    shape[static_cast<std::size_t>(a)] = out_len;
  }
  for (double& v : w) v = -v;
  return DiscreteConjugate{std::move(w), std::move(flag)};
}

/// Discrete conjugate on `dual`; every non-outside dual node must be hull-valid.
inline GridFunction legendre_grid(const GridFunction& f, std::shared_ptr<const Grid> dual, int threads = 1) {
  const auto conv = check_convex(f);
  if (conv.min_eigenvalue < -1e-8)
    throw Error(ErrorKind::convexity, "conjugation input is not convex",
                json{{"node", conv.worst_node}, {"min_eigenvalue", conv.min_eigenvalue}});
  auto dc = discrete_conjugate(f, *dual, threads);
  const auto clipped = dc.clipped_nodes(*dual);
  if (!clipped.empty())
    throw Error(ErrorKind::extrapolation, "dual nodes outside the sampled gradient hull",
                json{{"clipped_nodes", clipped}, {"count", clipped.size()}});
  return GridFunction(std::move(dual), std::move(dc.values));
}

/// Rectangular grid spanning the FD-gradient range of f over its interior nodes, with the
/// same per-axis node counts as f's grid.
inline std::shared_ptr<const Grid> gradient_range_grid(const GridFunction& f) {
  const int n = f.grid().dim();
  Vector lo = Vector::Constant(n, std::numeric_limits<double>::infinity());
  Vector hi = -lo;
  for (std::size_t node : f.grid().nodes_of_kind(NodeKind::interior)) {
    const Vector gr = fd_gradient(f, node);
    lo = lo.cwiseMin(gr);
    hi = hi.cwiseMax(gr);
  }
  if (!lo.allFinite() || !((hi - lo).array() > 0).all())
    throw Error(ErrorKind::degeneracy, "gradient range is degenerate");
  const MaskPolicy policy{f.grid().policy().stencil_radius, true};
  return std::make_shared<const Grid>(ConvexDomain::box(lo, hi), lo, hi, f.grid().resolution(), policy);
}

/// max |f** - f| over interior nodes whose double conjugate is hull-valid.
inline double involution_residual(const GridFunction& f, int threads = 1) {
  const auto dual = gradient_range_grid(f);
  const auto first = discrete_conjugate(f, *dual, threads);
  const GridFunction u(dual, first.values);
  const auto second = discrete_conjugate(u, f.grid(), threads);
  double worst = 0.0;
  for (std::size_t node : f.grid().nodes_of_kind(NodeKind::interior))
    if (!second.clipped[node]) worst = std::max(worst, std::abs(second.values[node] - f[node]));
  return worst;
}

}  // namespace malab
