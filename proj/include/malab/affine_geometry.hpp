#pragma once

/**
 * @file affine_geometry.hpp
 * @brief Calabi-metric geometry of a convex graph: metric, connection, cubic form,
 * curvatures, rho, Phi and the Laplacian, from an oracle or a sampled field.
 *
 * Every quantity is expressed in the coordinates of the chosen side: x for a primal
 * potential f, xi for a dual potential u.
 */

#include "malab/oracle.hpp"

namespace malab {

/// Metric-level data at one point: G, its inverse, grad log det G, rho and Phi.
struct MetricPoint {
  Matrix G;
  Matrix Ginv;
  Vector L;  // d/dx_k log det G = G^{ab} G_abk
  double log_det = 0.0;
  double rho = 0.0;
  Vector grad_log_rho;
  double Phi = 0.0;

  Vector grad_rho() const { return rho * grad_log_rho; }
};

namespace detail {

inline double side_sign(Side s) { return s == Side::primal ? 1.0 : -1.0; }

inline MetricPoint metric_point(const Jet& j, Side side, const Vector& x) {
  const int n = static_cast<int>(j.hessian.rows());
  MetricPoint m;
  m.G = symmetrize(j.hessian);
  Eigen::LLT<Matrix> llt(m.G);
  const double lam = Eigen::SelfAdjointEigenSolver<Matrix>(m.G, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  if (llt.info() != Eigen::Success || !(lam > 1e-14 * std::max(1.0, m.G.norm())))
    throw Error(ErrorKind::degeneracy, "Hessian is not positive definite", json{{"point", to_json(x)}, {"min_eigenvalue", lam}});
  m.Ginv = symmetrize(llt.solve(Matrix::Identity(n, n)));
  m.log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  m.L = Vector::Zero(n);
  for (int k = 0; k < n; ++k)
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) m.L(k) += m.Ginv(a, b) * j.third(a, b, k);
  const double s = side_sign(side);
  m.rho = std::exp(-s * m.log_det / (n + 2));
  m.grad_log_rho = -s * m.L / (n + 2);
  m.Phi = std::max(0.0, m.grad_log_rho.dot(m.Ginv * m.grad_log_rho));
  return m;
}

/// Row a holds d/dx_a of the vector-valued v at x: central differences with one
/// Richardson level.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& v, const Vector& x, double h) {
  const int n = static_cast<int>(x.size());
  auto central = [&](double step) {
    Matrix D;
    for (int a = 0; a < n; ++a) {
      Vector xp = x, xm = x;
      xp(a) += step;
      xm(a) -= step;
      const Vector row = (v(xp) - v(xm)) / (2.0 * step);
      if (a == 0) D.resize(n, row.size());
      D.row(a) = row.transpose();
    }
    return D;
  };
  return (4.0 * central(0.5 * h) - central(h)) / 3.0;
}

inline Vector fd_gradient_values(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  const auto wrap = [&](const Vector& y) { return Vector::Constant(1, f(y)); };
  return fd_jacobian(wrap, x, h).col(0);
}

inline Matrix fd_hessian_values(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  const int n = static_cast<int>(x.size());
  const double f0 = f(x);
  auto central = [&](double s) {
    Matrix H(n, n);
    for (int a = 0; a < n; ++a) {
      Vector xp = x, xm = x;
      xp(a) += s;
      xm(a) -= s;
      H(a, a) = (f(xp) - 2.0 * f0 + f(xm)) / (s * s);
      for (int b = a + 1; b < n; ++b) {
        Vector pp = x, pm = x, mp = x, mm = x;
        pp(a) += s, pp(b) += s;
        pm(a) += s, pm(b) -= s;
        mp(a) -= s, mp(b) += s;
        mm(a) -= s, mm(b) -= s;
        H(a, b) = H(b, a) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * s * s);
      }
    }
    return H;
  };
  return (4.0 * central(0.5 * h) - central(h)) / 3.0;
}

inline Vector flatten(const Tensor3& t) {
  return Eigen::Map<const Vector>(t.raw().data(), static_cast<Eigen::Index>(t.raw().size()));
}

/// Gamma(k,i,j) = 1/2 G^{kl} T_ijl.
inline Tensor3 christoffel(const Matrix& Ginv, const Tensor3& T) {
  const int n = T.dim();
  Tensor3 g(n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) s += Ginv(k, l) * T(i, j, l);
        g(k, i, j) = 0.5 * s;
      }
  return g;
}

inline Tensor3 cubic_form(const Tensor3& T, Side side) {
  Tensor3 a = T;
  a *= -0.5 * side_sign(side);
  return a;
}

/// R_ik = G^{mh} G^{lj} (A_iml A_hjk - A_imk A_hlj).
inline Matrix ricci_from_cubic(const Matrix& Ginv, const Tensor3& A) {
  const int n = A.dim();
  Matrix R = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double s = 0.0;
      for (int m = 0; m < n; ++m)
        for (int h = 0; h < n; ++h)
          for (int l = 0; l < n; ++l)
            for (int j = 0; j < n; ++j) s += Ginv(m, h) * Ginv(l, j) * (A(i, m, l) * A(h, j, k) - A(i, m, k) * A(h, l, j));
      R(i, k) = s;
    }
  return R;
}

/// Kahler Ricci form in the coordinates of `side`, from dL(a,b) = d_a L_b.
///   primal: R = -d d log det f
///   dual:   R_ab = d_a L_b - T_abq G^{qc} L_c  (the x-form pulled back to xi)
inline Matrix kahler_ricci(const Matrix& dL, const Tensor3& T, const Matrix& Ginv, const Vector& L, Side side) {
  const Matrix sym = symmetrize(dL);
  if (side == Side::primal) return -sym;
  const Vector w = Ginv * L;
  Matrix R = sym;
  for (int a = 0; a < T.dim(); ++a)
    for (int b = 0; b < T.dim(); ++b)
      for (int q = 0; q < T.dim(); ++q) R(a, b) -= T(a, b, q) * w(q);
  return R;
}

inline json tensor_to_json(const Tensor3& t) {
  json out = json::array();
  for (int i = 0; i < t.dim(); ++i) out.push_back(to_json(t.slice(i)));
  return out;
}

}  // namespace detail

/// All pointwise geometric quantities at one point (B = 0 identically and not stored).
struct GeometrySample {
  Vector point;
  Side side = Side::primal;
  Matrix G;
  Matrix Ginv;
  Tensor3 Gamma;  // Gamma(k, i, j)
  Tensor3 A;
  double J = 0.0;
  Matrix Ricci;
  Matrix KahlerRicci;
  double KahlerScalar = 0.0;
  double rho = 0.0;
  Vector grad_rho;
  double Phi = 0.0;
  Vector conormal;

  json to_json() const {
    return json{{"point", malab::to_json(point)},
                {"side", to_string(side)},
                {"G", malab::to_json(G)},
                {"Ginv", malab::to_json(Ginv)},
                {"Gamma", detail::tensor_to_json(Gamma)},
                {"A", detail::tensor_to_json(A)},
                {"J", J},
                {"Ricci", malab::to_json(Ricci)},
                {"KahlerRicci", malab::to_json(KahlerRicci)},
                {"KahlerScalar", KahlerScalar},
                {"rho", rho},
                {"grad_rho", malab::to_json(grad_rho)},
                {"Phi", Phi},
                {"conormal", malab::to_json(conormal)}};
  }
};

namespace detail {

/// Everything except the Kahler Ricci form, which needs one more derivative.
inline GeometrySample geometry_from_jet(const Jet& j, Side side, const Vector& x) {
  const int n = static_cast<int>(x.size());
  const MetricPoint m = metric_point(j, side, x);
  GeometrySample s;
  s.point = x;
  s.side = side;
  s.G = m.G;
  s.Ginv = m.Ginv;
  s.Gamma = christoffel(m.Ginv, j.third);
  s.A = cubic_form(j.third, side);
  const Tensor3 up = j.third.pulled_back(m.Ginv);
  double jj = 0.0;
  for (std::size_t i = 0; i < up.raw().size(); ++i) jj += up.raw()[i] * j.third.raw()[i];
  s.J = std::max(0.0, jj / (4.0 * n * (n - 1)));
  s.Ricci = symmetrize(ricci_from_cubic(m.Ginv, s.A));
  s.rho = m.rho;
  s.grad_rho = m.grad_rho();
  s.Phi = m.Phi;
  s.conormal = Vector::Ones(n + 1);
  s.conormal.head(n) = side == Side::primal ? Vector(-j.gradient) : Vector(-x);
  return s;
}

inline void set_kahler(GeometrySample& s, const Matrix& KR) {
  s.KahlerRicci = KR;
  s.KahlerScalar = 0.5 * (s.Ginv.cwiseProduct(KR)).sum();
}

inline Vector log_det_gradient(const FieldOracle& f, const Vector& y, Side side) {
  return metric_point(f.jet(y), side, y).L;
}

}  // namespace detail

/// Geometry of an analytic potential at x; the Kahler Ricci form uses central
/// differences of the exact grad log det with step h (one Richardson level).
inline GeometrySample geometry_sample(const FieldOracle& potential, const Vector& x, Side side, double h = 1e-3) {
  potential.require(x);
  const Jet j = potential.jet(x);
  GeometrySample s = detail::geometry_from_jet(j, side, x);
  const Matrix dL = detail::fd_jacobian([&](const Vector& y) { return detail::log_det_gradient(potential, y, side); }, x, h);
  const MetricPoint m = detail::metric_point(j, side, x);
  detail::set_kahler(s, detail::kahler_ricci(dL, j.third, m.Ginv, m.L, side));
  return s;
}

/// Geometry of a sampled potential at a node from finite-difference jets.  The node
/// must be deep enough that its neighbors carry Hessian stencils.
inline GeometrySample geometry_sample(const GridFunction& potential, std::size_t node, Side side) {
  const Grid& g = potential.grid();
  if (!g.deep(node, 1)) throw Error(ErrorKind::stencil, "geometry needs a node whose neighbors are interior", json{{"node", node}});
  const int n = g.dim();
  const Jet j = fd_jet(potential, node);
  const Vector x = g.point(node);
  GeometrySample s = detail::geometry_from_jet(j, side, x);
  auto logdet = [&](const std::vector<int>& off) {
    const Matrix H = fd_hessian(potential, *g.neighbor(node, off));
    Eigen::LLT<Matrix> llt(symmetrize(H));
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::degeneracy, "Hessian is not positive definite", json{{"node", node}});
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  };
  const Vector& h = g.spacing();
  const double l0 = logdet(std::vector<int>(static_cast<std::size_t>(n), 0));
  Matrix ddl(n, n);
  for (int a = 0; a < n; ++a) {
    std::vector<int> p(static_cast<std::size_t>(n), 0), m = p;
    p[static_cast<std::size_t>(a)] = 1;
    m[static_cast<std::size_t>(a)] = -1;
    ddl(a, a) = (logdet(p) - 2.0 * l0 + logdet(m)) / (h(a) * h(a));
    for (int b = a + 1; b < n; ++b) {
      double acc = 0.0;
      for (int sa : {-1, 1})
        for (int sb : {-1, 1}) {
          std::vector<int> off(static_cast<std::size_t>(n), 0);
          off[static_cast<std::size_t>(a)] = sa;
          off[static_cast<std::size_t>(b)] = sb;
          acc += sa * sb * logdet(off);
        }
      ddl(a, b) = ddl(b, a) = acc / (4.0 * h(a) * h(b));
    }
  }
  const MetricPoint mp = detail::metric_point(j, side, x);
  detail::set_kahler(s, detail::kahler_ricci(ddl, j.third, mp.Ginv, mp.L, side));
  return s;
}

/// A scalar field for the Laplacian; missing derivatives are taken by finite differences.
struct ScalarRule {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  std::function<Matrix(const Vector&)> hessian;
};

/// Calabi Laplacian of the potential,
///   Delta = G^{ij} d_ij + s (n+2)/(2 rho) G^{ij} rho_j d_i,  s = +1 primal, -1 dual.
class CalabiOperator {
 public:
  CalabiOperator(const FieldOracle& potential, Side side, double h = 1e-3) : potential_(&potential), side_(side), h_(h) {
    if (!(h > 0)) throw Error(ErrorKind::precondition, "finite-difference step must be positive");
  }

  double operator()(const ScalarRule& field, const Vector& x) const {
    const MetricPoint m = detail::metric_point(potential_->jet(x), side_, x);
    return apply(m, field, x);
  }

  double apply(const MetricPoint& m, const ScalarRule& field, const Vector& x) const {
    const int n = static_cast<int>(x.size());
    const Vector grad = field.gradient ? field.gradient(x) : detail::fd_gradient_values(field.value, x, h_);
    Matrix hess;
    if (field.hessian) {
      hess = field.hessian(x);
    } else if (field.gradient) {
      hess = symmetrize(detail::fd_jacobian(field.gradient, x, h_));
    } else {
      hess = detail::fd_hessian_values(field.value, x, h_);
    }
    const double s = detail::side_sign(side_);
    return m.Ginv.cwiseProduct(hess).sum() + s * 0.5 * (n + 2) * m.grad_log_rho.dot(m.Ginv * grad);
  }

  const FieldOracle& potential() const noexcept { return *potential_; }
  Side side() const noexcept { return side_; }
  double step() const noexcept { return h_; }

 private:
  const FieldOracle* potential_;
  Side side_;
  double h_;
};

inline double calabi_laplacian(const FieldOracle& potential, Side side, const ScalarRule& field, const Vector& x, double h = 1e-3) {
  return CalabiOperator(potential, side, h)(field, x);
}

/// Phi at a point as a scalar rule (for the Laplacian and its gradient).
inline ScalarRule phi_rule(const FieldOracle& potential, Side side) {
  return ScalarRule{[&potential, side](const Vector& y) { return detail::metric_point(potential.jet(y), side, y).Phi; }, {}, {}};
}

struct StructureResiduals {
  double gauss_2_1 = 0.0;
  double codazzi = 0.0;
  double ricci_consistency = 0.0;

  json to_json() const { return json{{"gauss_2_1", gauss_2_1}, {"codazzi", codazzi}, {"ricci_consistency", ricci_consistency}}; }
};

/// Residuals of the structure equations at x: the Gauss formula with the covariant
/// second derivative of the position vector, Codazzi symmetry of the covariant
/// derivative of A, and the Ricci tensor from A against the one from Gamma.
inline StructureResiduals structure_residuals(const FieldOracle& potential, const Vector& x, Side side, double h = 1e-3) {
  potential.require(x);
  const int n = potential.dim();
  const Jet j = potential.jet(x);
  const GeometrySample s = detail::geometry_from_jet(j, side, x);
  StructureResiduals out;

  // position vector derivatives: dy[k] = d_k y, ddy(i,j) = d_i d_j y in R^{n+1}
  std::vector<Vector> dy(static_cast<std::size_t>(n), Vector::Zero(n + 1));
  auto ddy = [&](int a, int b) {
    Vector v = Vector::Zero(n + 1);
    if (side == Side::primal) {
      v(n) = j.hessian(a, b);
    } else {
      for (int k = 0; k < n; ++k) v(k) = j.third(k, a, b);
      v(n) = j.hessian(a, b);
      for (int k = 0; k < n; ++k) v(n) += x(k) * j.third(k, a, b);
    }
    return v;
  };
  for (int a = 0; a < n; ++a) {
    Vector& d = dy[static_cast<std::size_t>(a)];
    if (side == Side::primal) {
      d(a) = 1.0;
      d(n) = j.gradient(a);
    } else {
      d.head(n) = j.hessian.col(a);
      d(n) = x.dot(j.hessian.col(a));
    }
  }
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      Vector r = ddy(a, b);
      for (int k = 0; k < n; ++k) {
        double up = 0.0;
        for (int l = 0; l < n; ++l) up += s.Ginv(k, l) * s.A(a, b, l);
        r -= (s.Gamma(k, a, b) + up) * dy[static_cast<std::size_t>(k)];
      }
      r(n) -= s.G(a, b);
      out.gauss_2_1 = std::max(out.gauss_2_1, r.cwiseAbs().maxCoeff());
    }

  // d_l A_ijk and d_l Gamma^k_ij by differences of exact third derivatives
  const Matrix dA = detail::fd_jacobian([&](const Vector& y) { return detail::flatten(detail::cubic_form(potential.jet(y).third, side)); }, x, h);
  const Matrix dG = detail::fd_jacobian([&](const Vector& y) {
    const Jet jy = potential.jet(y);
    return detail::flatten(detail::christoffel(detail::metric_point(jy, side, y).Ginv, jy.third));
  }, x, h);
  auto at = [n](int i, int jj, int k) { return static_cast<Eigen::Index>((i * n + jj) * n + k); };
  auto cov = [&](int i, int jj, int k, int l) {
    double v = dA(l, at(i, jj, k));
    for (int m = 0; m < n; ++m) v -= s.Gamma(m, l, i) * s.A(m, jj, k) + s.Gamma(m, l, jj) * s.A(i, m, k) + s.Gamma(m, l, k) * s.A(i, jj, m);
    return v;
  };
  for (int i = 0; i < n; ++i)
    for (int jj = 0; jj < n; ++jj)
      for (int k = 0; k < n; ++k)
        for (int l = k + 1; l < n; ++l) out.codazzi = std::max(out.codazzi, std::abs(cov(i, jj, k, l) - cov(i, jj, l, k)));

  // R_ik = d_l Gamma^l_ik - d_k Gamma^l_il + Gamma^l_lm Gamma^m_ik - Gamma^l_km Gamma^m_il
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double r = 0.0;
      for (int l = 0; l < n; ++l) {
        r += dG(l, at(l, i, k)) - dG(k, at(l, i, l));
        for (int m = 0; m < n; ++m) r += s.Gamma(l, l, m) * s.Gamma(m, i, k) - s.Gamma(l, k, m) * s.Gamma(m, i, l);
      }
      out.ricci_consistency = std::max(out.ricci_consistency, std::abs(r - s.Ricci(i, k)));
    }
  return out;
}

}  // namespace malab
