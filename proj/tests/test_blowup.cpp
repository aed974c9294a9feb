#include "malab/blowup.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace malab;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

OraclePtr quadratic(const Matrix& A) { return std::make_shared<QuadraticOracle>(A, Vector::Zero(A.rows()), 0.0); }

BlowupOptions light() {
  BlowupOptions o;
  o.functionals.probes_per_axis = 61;
  o.sphere_probes = 32;
  return o;
}

}  // namespace

TEST(Section, RoundQuadratic) {
  // {|xi|^2 / 2 < 2} is the disc of radius 2; the tangent 128-gon has circumradius 2 / cos(pi/128)
  const auto s = extract_section(QuadraticOracle::identity(2), Vector::Zero(2), 2.0);
  EXPECT_EQ(s.boundary.size(), 128u);
  EXPECT_LE(s.max_level_error, 1e-6);
  for (const auto& b : s.boundary) EXPECT_NEAR(b.norm(), 2.0, 1e-7);
  const double scale = std::cos(std::numbers::pi / 128) / 2.0;
  EXPECT_LT((s.T().linear() - scale * Matrix::Identity(2, 2)).norm(), 1e-6);
  EXPECT_LT(s.T().offset().norm(), 1e-9);
  EXPECT_NEAR(s.T().linear()(0, 0), 0.5, 1e-3);
}

TEST(Section, Ellipse) {
  // u = xi^T diag(1, 4) xi: the level-1 section has semi-axes 1 and 1/2
  const auto s = extract_section(quadratic(Matrix(vec({2, 8}).asDiagonal())), Vector::Zero(2), 1.0);
  EXPECT_LE(s.max_level_error, 1e-6);
  EXPECT_NEAR(s.T().linear()(0, 0), 1.0, 2e-3);
  EXPECT_NEAR(s.T().linear()(1, 1), 2.0, 4e-3);
  EXPECT_NEAR(s.T().linear()(0, 1), 0.0, 1e-5);
  EXPECT_LE(s.normalization.outer_radius, 1.0 + 1e-6);
  EXPECT_GE(s.normalization.inner_radius, sandwich_inner_bound(2));
  // the normalized potential is 1/C times the normalized u
  const Vector eta = vec({0.3, -0.2});
  const Vector xi = s.T().apply_inverse(eta);
  EXPECT_NEAR(s.normalized->value(eta), xi(0) * xi(0) + 4 * xi(1) * xi(1), 1e-12);
}

TEST(Section, DualLog) {
  // v(xi1) = xi1 ln xi1 - xi1 + 1 along the axis: the level 0.3 set is compact in xi1 > 0
  const auto u = std::make_shared<LogOracle>(2);
  const auto s = extract_section(u, vec({1, 0}), 0.3);
  EXPECT_LE(s.max_level_error, 1e-6);
  double lo = 10;
  for (const auto& b : s.boundary) {
    lo = std::min(lo, b(0));
    EXPECT_NEAR(b(0) * std::log(b(0)) - b(0) + 1.0 + 0.5 * b(1) * b(1), 0.3, 1e-6);
  }
  EXPECT_GT(lo, 0.0);
  try {
    extract_section(u, vec({1, 0}), 10.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unbounded_section);
  }
}

TEST(Section, ThreeDimensional) {
  const auto s = extract_section(QuadraticOracle::identity(3), Vector::Zero(3), 0.5, 128);
  EXPECT_LE(s.max_level_error, 1e-6);
  EXPECT_NEAR(s.T().linear()(0, 0), 1.0, 0.1);
}

TEST(Blowup, QuadraticFixedPoint) {
  const auto rep = run_blowup(QuadraticOracle::identity(2), Vector::Zero(2), {1, 2, 4, 8}, light());
  ASSERT_EQ(rep.records.size(), 4u);
  EXPECT_LE(rep.max_sup_Phi(), 1e-10);
  EXPECT_TRUE(rep.scaling_ok());
  EXPECT_TRUE(rep.normal_map_ok());
  for (const auto& r : rep.records) EXPECT_EQ(r.half.A.value, 0.0);
}

TEST(Blowup, RandomQuadraticSectionsSelfSimilar) {
  std::mt19937 rng(13);
  std::normal_distribution<double> N;
  Matrix M(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) M(i, j) = N(rng);
  const Matrix A = M * M.transpose() + Matrix::Identity(2, 2);
  const std::vector<double> ladder{1, 2, 4, 8};
  const auto rep = run_blowup(quadratic(A), vec({0.4, -0.3}), ladder, light());
  EXPECT_LE(rep.max_sup_Phi(), 1e-10);
  for (std::size_t k = 1; k < ladder.size(); ++k) {
    const Matrix ratio = rep.records[k].section.T().linear() * rep.records[k - 1].section.T().inverse_linear();
    EXPECT_LT((ratio - std::sqrt(ladder[k - 1] / ladder[k]) * Matrix::Identity(2, 2)).norm(), 1e-6);
  }
}

TEST(Blowup, DualLogScalingLaw) {
  const auto u = std::make_shared<LogOracle>(2);
  const auto rep = run_blowup(u, vec({1, 0}), {0.1, 0.2, 0.3}, light());
  EXPECT_NEAR(rep.phi_p, geometry_sample(*u, vec({1, 0}), Side::dual).Phi, 1e-15);
  EXPECT_GT(rep.phi_p, 0.0);
  EXPECT_LE(rep.max_scaling_error(), 1e-6);
  EXPECT_TRUE(rep.normal_map_ok());
  for (std::size_t k = 0; k < rep.records.size(); ++k) {
    const auto& r = rep.records[k];
    EXPECT_GT(r.half.max_Phi, 0.0);
    EXPECT_GE(r.running_max_rho, r.half.max_rho);
    if (k > 0) {
      EXPECT_GE(r.running_max_rho, rep.records[k - 1].running_max_rho);
    }
    EXPECT_NEAR(r.section.normalized->value(r.section.image_of_p()), 0.0, 1e-14);
  }
  const json j = rep.to_json();
  EXPECT_EQ(j.at("records").size(), 3u);
}

TEST(Blowup, BadLadder) {
  EXPECT_THROW(run_blowup(QuadraticOracle::identity(2), Vector::Zero(2), {2, 1}), Error);
  EXPECT_THROW(run_blowup(QuadraticOracle::identity(2), Vector::Zero(2), {}), Error);
}

TEST(Blowup, PhiIsUnimodularInvariant) {
  const auto u = std::make_shared<LogOracle>(2);
  Matrix S(2, 2);
  S << 2.0, 0.7, 0.0, 0.5;
  const RescaledOracle w(u, S, vec({0.2, 0.1}), 1.0);
  for (const Vector& eta : {vec({0.3, 0.1}), vec({0.5, -0.4}), vec({1.0, 0.2})}) {
    const Vector xi = S * eta + vec({0.2, 0.1});
    EXPECT_NEAR(geometry_sample(w, eta, Side::dual).Phi, geometry_sample(*u, xi, Side::dual).Phi, 1e-8);
  }
}

TEST(NormalMap, ExactForQuadratic) {
  // w = |eta|^2 / 2: R = 1 and grad w (eta) = eta
  const auto c = normal_map_check(*QuadraticOracle::identity(2), Vector::Zero(2), 16);
  EXPECT_NEAR(c.R, 1.0, 1e-7);
  EXPECT_NEAR(c.r, 0.5, 1e-7);
  EXPECT_TRUE(c.pass);
  EXPECT_NEAR(c.min_level_margin, 0.5 - 0.125, 1e-7);
}
