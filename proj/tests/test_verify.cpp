#include "malab/verify.hpp"

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

}  // namespace

TEST(PdeGate, ExpSolutionResidual) {
  for (int n : {2, 3, 5}) {
    const ExpOracle f(n);
    DriftCoefficients dr = DriftCoefficients::zero(n);
    dr.d(0) = 1.0;
    dr.d0 = (n - 1) * std::log(2.0);
    for (const Vector& x : random_probes(Vector::Constant(n, -1), Vector::Constant(n, 1), 50, 9))
      EXPECT_LE(std::abs(pde_residual(f, Side::primal, dr, x)), 1e-12);
    // inferred drift agrees with the declared one
    const auto gate = pde_gate(f, Side::primal, {Vector::Zero(n)});
    EXPECT_LT((gate.drift.d - dr.d).norm(), 1e-12);
    EXPECT_NEAR(gate.drift.d0, dr.d0, 1e-12);
  }
}

TEST(PdeGate, InferredDriftOnDualSide) {
  const LogOracle u(3, 2.0);
  const auto probes = random_probes(vec({0.5, -1, -1}), vec({2, 1, 1}), 20, 4);
  const auto gate = pde_gate(u, Side::dual, probes);
  EXPECT_LE(gate.max_residual, 1e-12);
}

TEST(PdeGate, CubicFails) {
  const CubicOracle c(Matrix::Identity(2, 2), 0.2);
  try {
    identity_suite(c, Side::primal, random_probes(vec({-1, -1}), vec({1, 1}), 10, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::precondition);
    EXPECT_TRUE(e.details().contains("max_residual"));
  }
}

TEST(IdentitySuite, Quadratic) {
  const auto q = QuadraticOracle::identity(2);
  const auto rep = identity_suite(*q, Side::primal, random_probes(vec({-1, -1}), vec({1, 1}), 20, 2));
  EXPECT_TRUE(rep.pass());
  EXPECT_LE(rep.max_error(), 1e-10);
}

TEST(IdentitySuite, ExpSolution) {
  for (int n : {2, 3}) {
    const auto rep = identity_suite(ExpOracle(n), Side::primal, random_probes(Vector::Constant(n, -1), Vector::Constant(n, 1), 100, 17));
    EXPECT_TRUE(rep.pass()) << rep.to_json().dump();
    EXPECT_LE(rep.max_error(), 1e-6);
    EXPECT_EQ(rep.checks.size(), 5u);
  }
}

TEST(IdentitySuite, DualLog) {
  const auto rep = identity_suite(LogOracle(2), Side::dual, random_probes(vec({0.5, -1}), vec({2, 1}), 100, 23));
  EXPECT_TRUE(rep.pass()) << rep.to_json().dump();
  EXPECT_LE(rep.max_error(), 1e-6);
}

TEST(IdentitySuite, ScalingByRecomputation) {
  // Phi of u/4 computed from a fresh oracle, not from the scaled jet
  const auto u = std::make_shared<LogOracle>(2);
  const RescaledOracle quarter(u, Matrix::Identity(2, 2), Vector::Zero(2), 0.25);
  for (const Vector& x : random_probes(vec({0.5, -1}), vec({2, 1}), 20, 5)) {
    const double phi = geometry_sample(*u, x, Side::dual).Phi;
    const double phi4 = geometry_sample(quarter, x, Side::dual).Phi;
    EXPECT_NEAR(phi4, 4.0 * phi, 1e-8);
  }
}

TEST(CurvatureInequality, QuadraticIsVacuous) {
  const auto q = QuadraticOracle::identity(2);
  const auto rep = prop31_check(*q, Side::primal, random_probes(vec({-1, -1}), vec({1, 1}), 10, 3));
  EXPECT_EQ(rep.skipped, 10u);
  EXPECT_TRUE(rep.residuals.empty());
  EXPECT_TRUE(rep.pass());
}

TEST(CurvatureInequality, ExpSolutionMatchesClosedForm) {
  // Phi = e^{-x1}/(n+2)^2, and Delta Phi = 3/2 e^{-x1} Phi, so the inequality is an equality
  for (int n : {2, 5}) {
    const ExpOracle f(n);
    const auto probes = random_probes(Vector::Constant(n, -1), Vector::Constant(n, 1), 30, 31);
    const auto rep = prop31_check(f, Side::primal, probes);
    EXPECT_TRUE(rep.pass());
    EXPECT_LE(std::max(std::abs(rep.min()), std::abs(rep.max())), 1e-6);
    const CalabiOperator lap(f, Side::primal);
    for (const Vector& x : {Vector(Vector::Zero(n)), probes[0]}) {
      const double phi = std::exp(-x(0)) / ((n + 2.0) * (n + 2.0));
      EXPECT_NEAR(lap(phi_rule(f, Side::primal), x), 1.5 * std::exp(-x(0)) * phi, 1e-7);
    }
  }
}

TEST(CurvatureInequality, DualLog) {
  const auto rep = prop31_check(LogOracle(2), Side::dual, random_probes(vec({0.5, -1}), vec({2, 1}), 60, 8));
  EXPECT_TRUE(rep.pass());
  EXPECT_EQ(rep.skipped, 0u);
}

TEST(CurvatureInequality, GridSample) {
  const LogOracle u(2);
  const auto box = ConvexDomain::box(vec({0.75, -0.5}), vec({1.75, 0.5}));
  const auto g = std::make_shared<const Grid>(Grid::fitted(box, 1.0 / 64, MaskPolicy{1, true}));
  const auto rep = prop31_check(sample_oracle(u, g), Side::dual);
  EXPECT_GT(rep.residuals.size(), 1000u);
  EXPECT_TRUE(rep.pass()) << rep.min();
  Prop31Options inner;
  inner.margin = 0.2;
  EXPECT_LT(prop31_check(sample_oracle(u, g), Side::dual, {}, inner).residuals.size(), rep.residuals.size());
}

TEST(CheckReportTest, PassRuleAndCsv) {
  CheckReport r{"x", "tol", 1e-3, {}, {}, 0};
  r.add(vec({0, 0}), 0.5);
  r.add(vec({1, 0}), -1e-3);
  EXPECT_TRUE(r.pass());
  r.add(vec({0, 1}), -2e-3);
  EXPECT_FALSE(r.pass());
  EXPECT_EQ(*r.argmin(), 2u);
  EXPECT_NE(r.to_csv().find("residual"), std::string::npos);
}

TEST(Functionals, QuadraticIsZero) {
  const auto q = QuadraticOracle::identity(2);
  ProofFunctionals pf;
  pf.C = 1.0;
  pf.probes_per_axis = 61;
  const auto r = lemma_functionals(q, Vector::Zero(2), pf);
  EXPECT_EQ(r.L_sec4.value, 0.0);
  EXPECT_EQ(r.A.value, 0.0);
  EXPECT_GT(r.probes, 1000u);
  EXPECT_DOUBLE_EQ(r.m_sec4, 8.0);
  EXPECT_DOUBLE_EQ(r.alpha, 0.25 - 2.0);
}

TEST(Functionals, DualLogInteriorSupremum) {
  const auto u = std::make_shared<LogOracle>(2);
  ProofFunctionals pf;
  pf.C = 1.0;
  const auto r = lemma_functionals(u, vec({1, 0}), pf);
  for (const SupRecord* s : {&r.L_sec4, &r.A, &r.B, &r.F63, &r.ratio51}) {
    EXPECT_TRUE(std::isfinite(s->value));
    EXPECT_GT(s->value, 0.0);
  }
  // the barrier kills the functional on the section boundary
  EXPECT_LT(r.L_sec4.level, 0.95);
  EXPECT_LT(r.A.level, 0.95);
  EXPECT_LE(r.max_H, 1.0 / 30 + 1e-15);
  EXPECT_LE(r.max_ratio_5_10, 1.0);
  EXPECT_LE(r.ratio51.value, r.b);
  EXPECT_GT(r.d, 1.0);

  ProofFunctionals coarse = pf;
  coarse.probes_per_axis = 101;
  const auto rc = lemma_functionals(u, vec({1, 0}), coarse);
  EXPECT_NEAR(rc.L_sec4.value / r.L_sec4.value, 1.0, 1e-2);
}

TEST(Functionals, UnboundedSectionIsWindowError) {
  // the level 40 section of the log potential at (1, 0) leaves the half plane xi1 > 0
  const auto u = std::make_shared<LogOracle>(2);
  ProofFunctionals pf;
  pf.C = 40.0;
  pf.probes_per_axis = 21;
  try {
    lemma_functionals(u, vec({1, 0}), pf);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::window);
  }
}

TEST(Functionals, GridAgreesWithOracle) {
  const auto u = std::make_shared<LogOracle>(2);
  const auto box = ConvexDomain::box(vec({0.2, -2}), vec({3, 2}));
  const auto g = std::make_shared<const Grid>(Grid::fitted(box, 1.0 / 64, MaskPolicy{1, true}));
  ProofFunctionals pf;
  pf.C = 0.25;
  pf.d = 4.0;
  const auto rg = lemma_functionals(sample_oracle(*u, g), g->nearest_node(vec({1, 0})), pf);
  const auto ro = lemma_functionals(u, vec({1, 0}), pf);
  EXPECT_NEAR(rg.L_sec4.value / ro.L_sec4.value, 1.0, 2e-2);
}

TEST(Functionals, LadderSupremaOnDualLog) {
  // sup L grows with C here: m/(C - v) = 8(n-1)/(1 - v/C) falls as C grows at fixed v
  const auto u = std::make_shared<LogOracle>(2);
  ProofFunctionals pf;
  pf.probes_per_axis = 101;
  const auto rep = sec4_ladder(u, vec({16, 0}), {1, 2, 4, 8}, pf);
  ASSERT_EQ(rep.levels.size(), 4u);
  for (std::size_t i = 1; i < rep.levels.size(); ++i) EXPECT_GE(rep.levels[i].L_sec4.value, rep.levels[i - 1].L_sec4.value);
  EXPECT_FALSE(rep.decreasing);
  EXPECT_FALSE(rep.pass());
}

TEST(DeterminantProbe, BoundFormula) {
  EXPECT_NEAR(lemma71_bound(2, 1.0, 2.0), std::sqrt(8.0) * std::pow(2.0, 0.75), 1e-12);
  EXPECT_NEAR(lemma71_bound(2, 1.0, 2.0), 4.7568, 1e-4);
  EXPECT_NEAR(lemma71_bound(2, 1.0, 3.0), std::pow(12.0, 0.5) * std::pow(2.0, 0.75), 1e-12);
}

TEST(DeterminantProbe, Fixtures) {
  const auto q = QuadraticOracle::identity(2);
  const auto rq = lemma71_probe(*q, 1.0, 1.0);
  EXPECT_NEAR(rq.rho_inverse, 1.0, 1e-12);
  EXPECT_LT(rq.point.norm(), 1.0);

  // 1/rho = (2 e^{x1})^{1/4}, smallest near x1 = -1
  const ExpOracle f(2);
  const auto re = lemma71_probe(f, 1.0, 3.0);
  EXPECT_LT(re.rho_inverse, re.d5);
  EXPECT_NEAR(re.rho_inverse, std::pow(2.0 / std::exp(1.0), 0.25), 1e-2);
  EXPECT_GT(re.max_abs_f, 2.7);
  EXPECT_LE(re.max_abs_f, std::exp(1.0));

  const ExpOracle f3(3);
  EXPECT_LT(lemma71_probe(f3, 0.5, 3.0).rho_inverse, lemma71_bound(3, 0.5, 3.0));
}

TEST(DeterminantProbe, BoundViolation) {
  try {
    lemma71_probe(ExpOracle(2), 1.0, 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::precondition);
  }
}
