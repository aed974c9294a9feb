#include "malab/ma_solver.hpp"

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

DriftCoefficients drift_e1(int n, double d0 = 0.0) {
  DriftCoefficients dr = DriftCoefficients::zero(n);
  dr.d(0) = 1.0;
  dr.d0 = d0;
  return dr;
}

double max_interior_error(const GridFunction& u, const FieldOracle& exact) {
  double e = 0;
  for (std::size_t node : u.grid().nodes_of_kind(NodeKind::interior)) e = std::max(e, std::abs(u[node] - exact.value(u.grid().point(node))));
  return e;
}

double max_abs_interior(const GridFunction& r) {
  double e = 0;
  for (std::size_t node : r.grid().nodes_of_kind(NodeKind::interior)) e = std::max(e, std::abs(r[node]));
  return e;
}

}  // namespace

TEST(ResidualField, Fixtures) {
  const auto box = ConvexDomain::box(vec({1, -1}), vec({2, 1}));
  const LogOracle dl(2);
  double prev = 0;
  for (double h : {1.0 / 16, 1.0 / 32}) {
    const auto g = std::make_shared<const Grid>(Grid::fitted(box, h, MaskPolicy{1, true}));
    const double r = max_abs_interior(residual_field(sample_oracle(dl, g), drift_e1(2), Side::dual));
    EXPECT_LT(r, 5.0 * h * h);
    if (prev > 0) {
      EXPECT_GT(prev / r, 3.4);
    }
    prev = r;
  }
  const auto ball = ConvexDomain::ball(Vector::Zero(2), 1.0);
  const auto gb = std::make_shared<const Grid>(Grid::padded(ball, 1.0 / 16, MaskPolicy{1, true}));
  EXPECT_LT(max_abs_interior(residual_field(sample_oracle(*QuadraticOracle::identity(2), gb), DriftCoefficients::zero(2), Side::dual)), 1e-12);

  const auto sq = ConvexDomain::box(vec({-1, -1}), vec({1, 1}));
  const auto gs = std::make_shared<const Grid>(Grid::fitted(sq, 1.0 / 32, MaskPolicy{1, true}));
  EXPECT_LT(max_abs_interior(residual_field(sample_oracle(ExpOracle(2), gs), drift_e1(2, std::log(2.0)), Side::primal)), 1e-3);
}

TEST(ResidualField, NonConvexNamesNode) {
  const auto sq = ConvexDomain::box(vec({-1, -1}), vec({1, 1}));
  const auto g = std::make_shared<const Grid>(Grid::fitted(sq, 0.125, MaskPolicy{1, true}));
  std::vector<double> vals(g->size());
  for (std::size_t i = 0; i < g->size(); ++i) vals[i] = -g->point(i).squaredNorm();
  try {
    residual_field(GridFunction(g, vals), DriftCoefficients::zero(2), Side::dual);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::convexity);
    EXPECT_TRUE(e.details().contains("node"));
  }
}

TEST(NewtonSolve, DualLogManufactured) {
  const auto box = ConvexDomain::box(vec({1, -1}), vec({2, 1}));
  const auto exact = std::make_shared<LogOracle>(2);
  const BoundaryFunction trace = [&](const Vector& x) { return exact->value(x); };
  std::vector<double> errs;
  for (double h : {1.0 / 16, 1.0 / 32}) {
    const auto res = newton_solve(box, solver_grid(box, h), drift_e1(2), Side::dual, trace);
    EXPECT_LE(res.report.final_residual, 1e-10);
    errs.push_back(max_interior_error(res.solution, *exact));
    // history strictly decreasing; boundary data reproduced exactly
    for (std::size_t k = 1; k < res.report.history.size(); ++k) EXPECT_LT(res.report.history[k], res.report.history[k - 1]);
    for (std::size_t node : res.solution.grid().nodes_of_kind(NodeKind::boundary))
      EXPECT_EQ(res.solution[node], exact->value(res.solution.grid().point(node)));
    EXPECT_TRUE(check_convex(res.solution).convex || res.solution.grid().nodes_of_kind(NodeKind::interior).empty());
    EXPECT_GT(res.report.min_hessian_eigenvalue, 0.0);
  }
  EXPECT_GE(std::log2(errs[0] / errs[1]), 1.8);
}

TEST(NewtonSolve, QuadraticOnBallIsExact) {
  const auto ball = ConvexDomain::ball(Vector::Zero(2), 1.0);
  const auto q = QuadraticOracle::identity(2);
  const auto res = newton_solve(ball, solver_grid(ball, 1.0 / 16), DriftCoefficients::zero(2), Side::dual,
                                [&](const Vector& x) { return q->value(x); });
  EXPECT_LT(max_interior_error(res.solution, *q), 1e-8);
}

TEST(NewtonSolve, ConstantBoundaryOnBallMatchesRadialOde) {
  // radial det = 1 in the plane: u' u'' / r = 1; integrate w = (u')^2, w' = 2r, then
  // u(0) = 1 - int_0^1 sqrt(w) dr.
  const int steps = 200000;
  double w = 0.0, integral = 0.0;
  const double dr = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const double r = i * dr;
    const double w_next = w + dr * (2 * r + 2 * (r + dr)) / 2;  // exact for linear rhs
    integral += 0.5 * dr * (std::sqrt(w) + std::sqrt(w_next));
    w = w_next;
  }
  const double center_oracle = 1.0 - integral;
  const auto ball = ConvexDomain::ball(Vector::Zero(2), 1.0);
  const auto grid = solver_grid(ball, 1.0 / 64);
  const auto res = newton_solve(ball, grid, DriftCoefficients::zero(2), Side::dual, [](const Vector&) { return 1.0; });
  EXPECT_NEAR(res.solution[grid->nearest_node(Vector::Zero(2))], center_oracle, 1e-3);
}

TEST(NewtonSolve, FailureModes) {
  const auto sq = ConvexDomain::box(vec({-1, -1}), vec({1, 1}));
  const auto grid = solver_grid(sq, 1.0 / 16);
  const BoundaryFunction g = [](const Vector& x) { return std::exp(x(0)) + x(1) * x(1); };
  // a given start skips the continuation, so one Newton step cannot reach the tolerance
  std::vector<double> bumped(grid->size());
  for (std::size_t i = 0; i < grid->size(); ++i) {
    const Vector x = grid->point(i);
    bumped[i] = g(x) - 0.1 * (1.0 - x(0) * x(0)) * (1.0 - x(1) * x(1));
  }
  const GridFunction start(grid, bumped);
  SolverConfig one;
  one.max_newton_iters = 1;
  one.init = "given";
  try {
    newton_solve(sq, grid, drift_e1(2, std::log(2.0)), Side::primal, g, one, &start);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::non_convergence);
    EXPECT_EQ(e.details().at("history").size(), 2u);
  }
  std::vector<double> concave(grid->size());
  for (std::size_t i = 0; i < grid->size(); ++i) concave[i] = -grid->point(i).squaredNorm();
  const GridFunction init(grid, concave);
  SolverConfig given;
  given.init = "given";
  try {
    newton_solve(sq, grid, drift_e1(2, std::log(2.0)), Side::primal, g, given, &init);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::convexity_breakdown);
  }
  EXPECT_THROW(newton_solve(sq, solver_grid(sq, 0.5), DriftCoefficients::zero(2), Side::dual, g), Error);
}

TEST(NewtonSolve, PrimalExpSolution) {
  const auto sq = ConvexDomain::box(vec({-1, -1}), vec({1, 1}));
  const ExpOracle f(2);
  const auto res = newton_solve(sq, solver_grid(sq, 1.0 / 32), drift_e1(2, std::log(2.0)), Side::primal,
                                [&](const Vector& x) { return f.value(x); });
  EXPECT_LT(max_interior_error(res.solution, f), 1e-3);
  // quadratic convergence tail
  const auto& hist = res.report.history;
  ASSERT_GE(hist.size(), 3u);
  EXPECT_LE(hist[hist.size() - 1] / hist[hist.size() - 2], 1e-2);
}

TEST(NewtonSolve, ComparisonPrinciple) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> U(-1, 1), P(0, 0.3);
  const auto ball = ConvexDomain::ball(Vector::Zero(2), 1.0);
  const auto grid = solver_grid(ball, 1.0 / 16);
  for (int pair = 0; pair < 3; ++pair) {
    const DriftCoefficients dr{0.0, vec({U(rng), U(rng)})};
    const double a = P(rng), k1 = 1 + 3 * P(rng), k2 = 1 + 3 * P(rng);
    const BoundaryFunction low = [](const Vector& x) { return 0.5 * x.squaredNorm(); };
    const BoundaryFunction high = [=](const Vector& x) { return 0.5 * x.squaredNorm() + a * (1.0 + std::sin(k1 * x(0) + k2 * x(1))); };
    const auto u1 = newton_solve(ball, grid, dr, Side::dual, high).solution;
    const auto u2 = newton_solve(ball, grid, dr, Side::dual, low).solution;
    for (std::size_t node = 0; node < grid->size(); ++node)
      if (grid->kind(node) != NodeKind::outside) {
        EXPECT_GE(u1[node], u2[node] - 1e-8);
      }
  }
}

TEST(NewtonSolve, UnimodularCovariance) {
  // S = diag(2, 1/2): v(eta) = u(S^{-1} eta) solves the same equation (drift 0)
  const auto b1 = ConvexDomain::box(vec({-1, -1}), vec({1, 1}));
  const auto b2 = ConvexDomain::box(vec({-2, -0.5}), vec({2, 0.5}));
  const BoundaryFunction g1 = [](const Vector& x) { return std::exp(0.5 * x(0)) + x(1) * x(1) + 0.3 * x(0) * x(1); };
  const BoundaryFunction g2 = [&](const Vector& y) { return g1(vec({y(0) / 2.0, y(1) * 2.0})); };
  const auto grid1 = std::make_shared<const Grid>(b1, vec({-1.0625, -1.0625}), vec({1.0625, 1.0625}), std::vector<int>{35, 35}, MaskPolicy{1, false});
  const auto grid2 = std::make_shared<const Grid>(b2, vec({-2.125, -0.53125}), vec({2.125, 0.53125}), std::vector<int>{35, 35}, MaskPolicy{1, false});
  const auto u1 = newton_solve(b1, grid1, DriftCoefficients::zero(2), Side::dual, g1).solution;
  const auto u2 = newton_solve(b2, grid2, DriftCoefficients::zero(2), Side::dual, g2).solution;
  for (std::size_t node : grid1->nodes_of_kind(NodeKind::interior)) EXPECT_NEAR(u1[node], u2[node], 1e-8);
}

TEST(NewtonSolve, CutCellResidualMatchesSolver) {
  const auto ball = ConvexDomain::ball(vec({0.2, 0.1}), 0.9);
  const BoundaryFunction g = [](const Vector& x) { return 0.5 * x.squaredNorm() + 0.2 * x(0) * x(0) * x(0); };
  const DriftCoefficients dr{0.1, vec({0.5, -0.3})};
  const auto res = newton_solve(ball, solver_grid(ball, 1.0 / 20), dr, Side::dual, g);
  const auto r = residual_field(res.solution, dr, Side::dual, ball, g);
  EXPECT_LE(max_abs_interior(r), 1e-10);
}
