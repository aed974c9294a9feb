#include "malab/affine_geometry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace malab;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Matrix random_spd(int n, std::mt19937& rng) {
  std::normal_distribution<double> N;
  Matrix M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = N(rng);
  return M * M.transpose() + n * Matrix::Identity(n, n);
}

}  // namespace

TEST(Geometry, QuadraticIsFlat) {
  const auto q = QuadraticOracle::identity(3);
  const auto s = geometry_sample(*q, Vector::Zero(3), Side::primal);
  EXPECT_LT((s.G - Matrix::Identity(3, 3)).norm(), 1e-15);
  EXPECT_EQ(s.Gamma.max_abs(), 0.0);
  EXPECT_EQ(s.A.max_abs(), 0.0);
  EXPECT_EQ(s.J, 0.0);
  EXPECT_LT(s.Ricci.norm(), 1e-14);
  EXPECT_LT(s.KahlerRicci.norm(), 1e-10);
  EXPECT_DOUBLE_EQ(s.rho, 1.0);
  EXPECT_LE(s.Phi, 1e-14);
  EXPECT_LT((s.conormal - vec({0, 0, 0, 1})).norm(), 1e-15);
}

TEST(Geometry, ExpSolutionAtOrigin) {
  const ExpOracle f(2);
  const auto s = geometry_sample(f, vec({0, 0}), Side::primal);
  EXPECT_NEAR(s.G(0, 0), 1.0, 1e-8);
  EXPECT_NEAR(s.G(1, 1), 2.0, 1e-8);
  EXPECT_NEAR(s.G(0, 1), 0.0, 1e-8);
  EXPECT_LT((s.Ginv * s.G - Matrix::Identity(2, 2)).norm(), 1e-10);
  EXPECT_NEAR(s.rho, std::pow(2.0, -0.25), 1e-8);
  EXPECT_NEAR(s.Phi, 1.0 / 16, 1e-8);
  EXPECT_NEAR(s.Gamma(0, 0, 0), 0.5, 1e-8);
  EXPECT_NEAR(s.A(0, 0, 0), -0.5, 1e-8);
  EXPECT_NEAR(s.J, 1.0 / 8, 1e-8);
  EXPECT_LT(s.Ricci.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(s.KahlerRicci.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(s.KahlerScalar, 0.0, 1e-8);
  // Phi recomputes from the stored fields
  EXPECT_NEAR(s.grad_rho.dot(s.Ginv * s.grad_rho) / (s.rho * s.rho), s.Phi, 1e-10);
  EXPECT_EQ(s.A.asymmetry(), 0.0);
}

TEST(Geometry, ExpSolutionPhiClosedForm) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int n : {2, 3, 5}) {
    const ExpOracle f(n);
    for (int k = 0; k < 10; ++k) {
      Vector x(n);
      for (int a = 0; a < n; ++a) x(a) = U(rng);
      const double phi = geometry_sample(f, x, Side::primal).Phi;
      const double exact = std::exp(-x(0)) / ((n + 2.0) * (n + 2.0));
      EXPECT_NEAR(phi / exact, 1.0, 1e-10);
    }
  }
}

TEST(Geometry, LegendreCovarianceOfPhi) {
  for (int n : {2, 3}) {
    const ExpOracle f(n);
    const LogOracle u(n, 2.0);
    for (const double x1 : {-0.7, 0.0, 0.9}) {
      Vector x = Vector::Zero(n);
      x(0) = x1;
      x(n - 1) = 0.3;
      const auto p = geometry_sample(f, x, Side::primal);
      const Vector xi = f.jet(x).gradient;
      const auto d = geometry_sample(u, xi, Side::dual);
      EXPECT_NEAR(p.Phi, d.Phi, 1e-8);
      EXPECT_NEAR(p.rho, d.rho, 1e-10);
      EXPECT_NEAR(p.J, d.J, 1e-8);
      EXPECT_LT(d.KahlerRicci.cwiseAbs().maxCoeff(), 1e-7);
      // the conormal depends only on the graph point
      EXPECT_LT((p.conormal - d.conormal).norm(), 1e-12);
    }
  }
}

TEST(Geometry, NonPositiveHessianIsDegenerate) {
  // f = x1^4 + x2^2 has a singular Hessian at the origin
  class Quartic final : public FieldOracle {
   public:
    int dim() const override { return 2; }
    std::string name() const override { return "quartic"; }
    double value(const Vector& x) const override { return std::pow(x(0), 4) + x(1) * x(1); }
    Jet jet(const Vector& x) const override {
      Jet j{value(x), vec({4 * std::pow(x(0), 3), 2 * x(1)}), Matrix::Zero(2, 2), Tensor3(2)};
      j.hessian(0, 0) = 12 * x(0) * x(0);
      j.hessian(1, 1) = 2;
      j.third(0, 0, 0) = 24 * x(0);
      return j;
    }
  };
  try {
    geometry_sample(Quartic(), vec({0, 0}), Side::primal);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degeneracy);
  }
}

TEST(Geometry, GridSampleApproachesOracle) {
  const LogOracle u(2);
  const Vector p = vec({1.5, 0.25});
  std::vector<double> errs;
  for (double h : {1.0 / 32, 1.0 / 64}) {
    const Vector lo = p.array() - 8 * h, hi = p.array() + 8 * h;
    const auto g = std::make_shared<const Grid>(ConvexDomain::box(lo, hi), lo, hi, std::vector<int>{17, 17});
    const auto field = sample_oracle(u, g);
    const auto s = geometry_sample(field, g->nearest_node(p), Side::dual);
    const auto exact = geometry_sample(u, p, Side::dual);
    errs.push_back(std::abs(s.Phi - exact.Phi));
    EXPECT_LT(s.KahlerRicci.cwiseAbs().maxCoeff(), 50 * h * h);
  }
  EXPECT_GE(std::log2(errs[0] / errs[1]), 1.8);
}

TEST(CalabiLaplacian, FlatAndExponential) {
  const auto q = QuadraticOracle::identity(3);
  const Vector x = vec({0.2, -0.1, 0.4});
  // Delta f = n and Delta u = n for the quadratic
  ScalarRule f{[&](const Vector& y) { return q->value(y); }, {}, {}};
  EXPECT_NEAR(calabi_laplacian(*q, Side::primal, f, x), 3.0, 1e-8);
  EXPECT_NEAR(calabi_laplacian(*q, Side::dual, f, x), 3.0, 1e-8);
  ScalarRule constant{[](const Vector&) { return 2.5; }, {}, {}};
  EXPECT_NEAR(calabi_laplacian(*q, Side::primal, constant, x), 0.0, 1e-10);

  // rho for the exp solution is exp{-(x1 + (n-1) ln 2)/(n+2)}: Delta rho = (n+4)/2 |grad rho|^2 / rho
  const int n = 2;
  const ExpOracle e(n);
  const ScalarRule rho{[&](const Vector& y) { return std::exp(-(y(0) + (n - 1) * std::log(2.0)) / (n + 2)); }, {}, {}};
  for (const Vector& p : {vec({0, 0}), vec({-0.8, 0.5}), vec({0.6, 1})}) {
    const auto s = geometry_sample(e, p, Side::primal);
    const double lhs = calabi_laplacian(e, Side::primal, rho, p);
    const double rhs = 0.5 * (n + 4) * s.grad_rho.dot(s.Ginv * s.grad_rho) / s.rho;
    EXPECT_NEAR(lhs, rhs, 1e-6);
  }
}

TEST(StructureResiduals, Fixtures) {
  const auto q = QuadraticOracle::identity(2);
  const auto rq = structure_residuals(*q, vec({0.3, 0.1}), Side::primal);
  EXPECT_LT(rq.gauss_2_1, 1e-10);
  EXPECT_LT(rq.codazzi, 1e-10);
  EXPECT_LT(rq.ricci_consistency, 1e-10);

  for (int n : {2, 3}) {
    const auto re = structure_residuals(ExpOracle(n), Vector::Zero(n), Side::primal);
    EXPECT_LT(re.gauss_2_1, 1e-5);
    EXPECT_LT(re.codazzi, 1e-5);
    EXPECT_LT(re.ricci_consistency, 1e-5);
  }
  const auto rd = structure_residuals(LogOracle(2), vec({1.2, -0.4}), Side::dual);
  EXPECT_LT(rd.gauss_2_1, 1e-5);
  EXPECT_LT(rd.codazzi, 1e-5);
  EXPECT_LT(rd.ricci_consistency, 1e-5);

  std::mt19937 rng(11);
  for (int n : {2, 3}) {
    const CubicOracle c(random_spd(n, rng), 1e-2);
    Vector x = Vector::Constant(n, 0.2);
    const auto s = geometry_sample(c, x, Side::primal);
    const auto r = structure_residuals(c, x, Side::primal);
    EXPECT_LT(r.gauss_2_1, 1e-4);
    EXPECT_LT(r.codazzi, 1e-4);
    EXPECT_LT(r.ricci_consistency, 1e-4);
    EXPECT_GE(s.J, 0.0);
  }
}

TEST(StructureResiduals, RicciFromCubicFormIsNotTrivial) {
  // a potential with a genuinely curved metric: f = sum exp(x_i) + 0.1 (x1 + x2)^3 on a window
  class Curved final : public FieldOracle {
   public:
    int dim() const override { return 2; }
    std::string name() const override { return "curved"; }
    double value(const Vector& x) const override { return std::exp(x(0)) + std::exp(x(1)) + 0.1 * std::pow(x(0) + x(1), 3) + x.squaredNorm(); }
    Jet jet(const Vector& x) const override {
      const double s = x(0) + x(1);
      Jet j{value(x), Vector(2), Matrix(2, 2), Tensor3(2)};
      j.gradient << std::exp(x(0)) + 0.3 * s * s + 2 * x(0), std::exp(x(1)) + 0.3 * s * s + 2 * x(1);
      j.hessian << std::exp(x(0)) + 0.6 * s + 2, 0.6 * s, 0.6 * s, std::exp(x(1)) + 0.6 * s + 2;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int c = 0; c < 2; ++c) j.third(a, b, c) = 0.6 + (a == b && b == c ? std::exp(x(a)) : 0.0);
      return j;
    }
  };
  const Curved f;
  const Vector x = vec({0.3, -0.2});
  const auto s = geometry_sample(f, x, Side::primal);
  EXPECT_GT(s.Ricci.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_GT(s.KahlerRicci.cwiseAbs().maxCoeff(), 1e-3);
  const auto r = structure_residuals(f, x, Side::primal);
  EXPECT_LT(r.ricci_consistency, 1e-6);
  EXPECT_LT(r.codazzi, 1e-6);
}
