#pragma once

/**
 * @file oracle.hpp
 * @brief Closed-form convex potentials with exact derivatives up to order 3.
 *
 * Fixtures solving the primal equation  log det D^2 f = d.x + d0  or the dual equation
 * log det D^2 u + d.grad u + d0 = 0, plus the wrappers used by the section machinery
 * (normalization at a point, affine rescaling) and a numerical Legendre dual.
 */

#include "malab/grid.hpp"

#include <memory>
#include <optional>

namespace malab {

/// The constants d0 and d = (d1, ..., dn).
struct DriftCoefficients {
  double d0 = 0.0;
  Vector d;

  static DriftCoefficients zero(int n) { return {0.0, Vector::Zero(n)}; }

  json to_json() const { return json{{"d0", d0 + 0.0}, {"d", malab::to_json(d)}}; }
  static DriftCoefficients from_json(const json& j) {
    DriftCoefficients c{j.at("d0").get<double>(), vector_from_json(j.at("d"))};
    if (!std::isfinite(c.d0) || !c.d.allFinite()) throw Error(ErrorKind::usage, "drift coefficients must be finite");
    return c;
  }
};

class FieldOracle {
 public:
  virtual ~FieldOracle() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;
  /// Open domain of definition.
  virtual bool in_domain(const Vector& x) const {
    (void)x;
    return true;
  }
  virtual double value(const Vector& x) const = 0;
  virtual Jet jet(const Vector& x) const = 0;
  /// Drift for which this function solves the equation of the given side, if any.
  virtual std::optional<DriftCoefficients> drift(Side side) const {
    (void)side;
    return std::nullopt;
  }
  virtual json parameters() const { return json::object(); }

  json describe() const {
    json j{{"name", name()}, {"n", dim()}, {"parameters", parameters()}};
    for (Side s : {Side::primal, Side::dual})
      if (auto dr = drift(s)) j[std::string("drift_") + to_string(s)] = dr->to_json();
    return j;
  }

  /// Throws a domain error when x is not an admissible evaluation point.
  void require(const Vector& x) const {
    if (x.size() != dim()) throw Error(ErrorKind::domain, name() + ": point has wrong dimension");
    if (!in_domain(x)) throw Error(ErrorKind::domain, name() + ": point outside the oracle domain", json{{"point", to_json(x)}});
  }
};

using OraclePtr = std::shared_ptr<const FieldOracle>;

/// f = 1/2 x'Ax + b'x + c.
class QuadraticOracle final : public FieldOracle {
 public:
  QuadraticOracle(Matrix A, Vector b, double c) : A_(symmetrize(A)), b_(std::move(b)), c_(c) {
    Eigen::LLT<Matrix> llt(A_);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::degeneracy, "quadratic fixture needs an SPD matrix");
    logdet_ = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }
  static std::shared_ptr<QuadraticOracle> identity(int n) {
    return std::make_shared<QuadraticOracle>(Matrix::Identity(n, n), Vector::Zero(n), 0.0);
  }

  int dim() const override { return static_cast<int>(b_.size()); }
  std::string name() const override { return "quadratic"; }
  double value(const Vector& x) const override {
    require(x);
    return 0.5 * x.dot(A_ * x) + b_.dot(x) + c_;
  }
  Jet jet(const Vector& x) const override {
    require(x);
    return Jet{0.5 * x.dot(A_ * x) + b_.dot(x) + c_, A_ * x + b_, A_, Tensor3(dim())};
  }
  std::optional<DriftCoefficients> drift(Side side) const override {
    return DriftCoefficients{side == Side::primal ? logdet_ : -logdet_, Vector::Zero(dim())};
  }
  json parameters() const override { return json{{"A", to_json(A_)}, {"b", to_json(b_)}, {"c", c_}}; }
  const Matrix& matrix() const noexcept { return A_; }

 private:
  Matrix A_;
  Vector b_;
  double c_;
  double logdet_ = 0.0;
};

/// f = exp(x1) + s/2 * sum_{i>=2} xi^2, solving the primal equation with d = e1,
/// d0 = (n-1) ln s.  s = 2 is the catalog entry "exp_solution".
class ExpOracle final : public FieldOracle {
 public:
  ExpOracle(int n, double s = 2.0) : n_(n), s_(s) {
    if (n < 2 || !(s > 0)) throw Error(ErrorKind::precondition, "exp fixture needs n >= 2 and s > 0");
  }
  int dim() const override { return n_; }
  std::string name() const override { return s_ == 2.0 ? "exp_solution" : "exp_family"; }
  double value(const Vector& x) const override {
    require(x);
    return std::exp(x(0)) + 0.5 * s_ * x.tail(n_ - 1).squaredNorm();
  }
  Jet jet(const Vector& x) const override {
    require(x);
    const double e = std::exp(x(0));
    Jet j{e + 0.5 * s_ * x.tail(n_ - 1).squaredNorm(), s_ * x, s_ * Matrix::Identity(n_, n_), Tensor3(n_)};
    j.gradient(0) = e;
    j.hessian(0, 0) = e;
    j.third(0, 0, 0) = e;
    return j;
  }
  std::optional<DriftCoefficients> drift(Side side) const override {
    if (side != Side::primal) return std::nullopt;
    Vector d = Vector::Zero(n_);
    d(0) = 1.0;
    return DriftCoefficients{(n_ - 1) * std::log(s_), d};
  }
  json parameters() const override { return json{{"s", s_}}; }
  double scale() const noexcept { return s_; }

 private:
  int n_;
  double s_;
};

/// u = xi1 ln xi1 - xi1 + 1/(2s) * sum_{i>=2} xi_i^2 on {xi1 > 0}, solving the dual
/// equation with d = e1, d0 = (n-1) ln s.  s = 1 is the catalog entry "dual_log";
/// the Legendre dual of ExpOracle(n, s).
class LogOracle final : public FieldOracle {
 public:
  LogOracle(int n, double s = 1.0) : n_(n), s_(s) {
    if (n < 2 || !(s > 0)) throw Error(ErrorKind::precondition, "log fixture needs n >= 2 and s > 0");
  }
  int dim() const override { return n_; }
  std::string name() const override { return s_ == 1.0 ? "dual_log" : "log_family"; }
  bool in_domain(const Vector& x) const override { return x(0) > 0.0; }
  double value(const Vector& x) const override {
    require(x);
    return x(0) * std::log(x(0)) - x(0) + 0.5 / s_ * x.tail(n_ - 1).squaredNorm();
  }
  Jet jet(const Vector& x) const override {
    require(x);
    const double t = x(0);
    Jet j{value(x), x / s_, Matrix::Identity(n_, n_) / s_, Tensor3(n_)};
    j.gradient(0) = std::log(t);
    j.hessian(0, 0) = 1.0 / t;
    j.third(0, 0, 0) = -1.0 / (t * t);
    return j;
  }
  std::optional<DriftCoefficients> drift(Side side) const override {
    if (side != Side::dual) return std::nullopt;
    Vector d = Vector::Zero(n_);
    d(0) = 1.0;
    return DriftCoefficients{(n_ - 1) * std::log(s_), d};
  }
  json parameters() const override { return json{{"s", s_}}; }

 private:
  int n_;
  double s_;
};

/// f = 1/2 x'Ax + eps * x1^3, defined where its Hessian stays positive definite.
class CubicOracle final : public FieldOracle {
 public:
  CubicOracle(Matrix A, double eps) : A_(symmetrize(A)), eps_(eps) {
    lam_ = Eigen::SelfAdjointEigenSolver<Matrix>(A_, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    if (!(lam_ > 0)) throw Error(ErrorKind::degeneracy, "cubic fixture needs an SPD matrix");
  }
  int dim() const override { return static_cast<int>(A_.rows()); }
  std::string name() const override { return "cubic"; }
  bool in_domain(const Vector& x) const override { return 6.0 * std::abs(eps_ * x(0)) < lam_; }
  double value(const Vector& x) const override {
    require(x);
    return 0.5 * x.dot(A_ * x) + eps_ * x(0) * x(0) * x(0);
  }
  Jet jet(const Vector& x) const override {
    require(x);
    Jet j{value(x), A_ * x, A_, Tensor3(dim())};
    j.gradient(0) += 3.0 * eps_ * x(0) * x(0);
    j.hessian(0, 0) += 6.0 * eps_ * x(0);
    j.third(0, 0, 0) = 6.0 * eps_;
    return j;
  }
  json parameters() const override { return json{{"A", to_json(A_)}, {"eps", eps_}}; }

 private:
  Matrix A_;
  double eps_;
  double lam_ = 0.0;
};

/// v(y) = u(y + p) - u(p) - grad u(p).y : translate p to the origin and subtract the
/// supporting plane, so v(0) = 0 is the minimum.
class NormalizedOracle final : public FieldOracle {
 public:
  NormalizedOracle(OraclePtr base, Vector p) : base_(std::move(base)), p_(std::move(p)) {
    const Jet j = base_->jet(p_);
    u0_ = j.value;
    g0_ = j.gradient;
  }
  int dim() const override { return base_->dim(); }
  std::string name() const override { return base_->name() + "@normalized"; }
  bool in_domain(const Vector& y) const override { return base_->in_domain(y + p_); }
  double value(const Vector& y) const override { return base_->value(y + p_) - u0_ - g0_.dot(y); }
  Jet jet(const Vector& y) const override {
    Jet j = base_->jet(y + p_);
    j.value -= u0_ + g0_.dot(y);
    j.gradient -= g0_;
    return j;
  }
  std::optional<DriftCoefficients> drift(Side side) const override {
    auto dr = base_->drift(side);
    if (!dr) return dr;
    dr->d0 += side == Side::dual ? dr->d.dot(g0_) : dr->d.dot(p_);
    return dr;
  }
  json parameters() const override { return json{{"base", base_->describe()}, {"p", to_json(p_)}}; }
  const Vector& base_point() const noexcept { return p_; }

 private:
  OraclePtr base_;
  Vector p_;
  double u0_ = 0.0;
  Vector g0_;
};

/// v(y) = s * u(L y + c).
class RescaledOracle final : public FieldOracle {
 public:
  RescaledOracle(OraclePtr base, Matrix L, Vector c, double s)
      : base_(std::move(base)), L_(std::move(L)), c_(std::move(c)), s_(s) {
    if (!(s_ > 0) || std::abs(L_.determinant()) == 0.0) throw Error(ErrorKind::degeneracy, "rescaling must be invertible");
  }
  int dim() const override { return base_->dim(); }
  std::string name() const override { return base_->name() + "@rescaled"; }
  bool in_domain(const Vector& y) const override { return base_->in_domain(L_ * y + c_); }
  double value(const Vector& y) const override { return s_ * base_->value(L_ * y + c_); }
  Jet jet(const Vector& y) const override {
    const Jet b = base_->jet(L_ * y + c_);
    Jet j{s_ * b.value, s_ * L_.transpose() * b.gradient, s_ * L_.transpose() * b.hessian * L_, b.third.pulled_back(L_)};
    j.third *= s_;
    return j;
  }
  std::optional<DriftCoefficients> drift(Side side) const override {
    auto dr = base_->drift(side);
    if (!dr) return dr;
    const int n = dim();
    const double logjac = n * std::log(s_) + 2.0 * std::log(std::abs(L_.determinant()));
    if (side == Side::dual) {
      dr->d = L_.fullPivLu().solve(dr->d) / s_;
      dr->d0 -= logjac;
    } else {
      dr->d0 += dr->d.dot(c_) + logjac;
      dr->d = L_.transpose() * dr->d;
    }
    return dr;
  }
  json parameters() const override {
    return json{{"base", base_->describe()}, {"L", to_json(L_)}, {"c", to_json(c_)}, {"s", s_}};
  }

 private:
  OraclePtr base_;
  Matrix L_;
  Vector c_;
  double s_;
};

/// Legendre dual of a strictly convex oracle evaluated by solving grad f(x) = xi with a
/// globally damped Newton iteration on f(x) - xi.x started from `guess`.
class LegendreDualOracle final : public FieldOracle {
 public:
  LegendreDualOracle(OraclePtr base, Vector guess) : base_(std::move(base)), guess_(std::move(guess)) {}

  int dim() const override { return base_->dim(); }
  std::string name() const override { return base_->name() + "@legendre"; }
  double value(const Vector& xi) const override { return jet(xi).value; }

  /// The primal point x with grad f(x) = xi.
  Vector preimage(const Vector& xi) const {
    Vector x = guess_;
    auto phi = [&](const Vector& y) { return base_->in_domain(y) ? base_->value(y) - xi.dot(y) : std::numeric_limits<double>::infinity(); };
    for (int it = 0; it < 200; ++it) {
      const Jet j = base_->jet(x);
      const Vector g = j.gradient - xi;
      if (g.norm() <= 1e-14 * std::max(1.0, xi.norm())) return x;
      const Vector step = j.hessian.llt().solve(-g);
      const double f0 = j.value - xi.dot(x);
      double t = 1.0;
      while (t > 1e-12 && !(phi(x + t * step) <= f0 + 1e-4 * t * g.dot(step))) t *= 0.5;
      if (t <= 1e-12) {
        x += step * 1e-12;
        break;
      }
      x += t * step;
    }
    const Vector g = base_->jet(x).gradient - xi;
    if (g.norm() > 1e-10 * std::max(1.0, xi.norm()))
      throw Error(ErrorKind::domain, "gradient map does not reach this point", json{{"point", to_json(xi)}});
    return x;
  }

  Jet jet(const Vector& xi) const override {
    const Vector x = preimage(xi);
    const Jet f = base_->jet(x);
    const Matrix Hinv = f.hessian.inverse();
    Jet j{xi.dot(x) - f.value, x, symmetrize(Hinv), f.third.pulled_back(Hinv)};
    j.third *= -1.0;
    return j;
  }
  std::optional<DriftCoefficients> drift(Side side) const override {
    return base_->drift(side == Side::dual ? Side::primal : Side::dual);
  }
  json parameters() const override { return json{{"base", base_->describe()}}; }

 private:
  OraclePtr base_;
  Vector guess_;
};

/// Catalog constructor; `params` may carry "s" (exp/log families), "A", "b", "c"
/// (quadratic) or "A", "eps" (cubic).
inline OraclePtr make_fixture(const std::string& name, int n, const json& params = json::object()) {
  if (n < 2) throw Error(ErrorKind::usage, "fixtures need n >= 2");
  auto get_matrix = [&](const char* key) {
    return params.contains(key) ? matrix_from_json(params.at(key)) : Matrix(Matrix::Identity(n, n));
  };
  if (name == "quadratic") {
    const Vector b = params.contains("b") ? vector_from_json(params.at("b")) : Vector(Vector::Zero(n));
    return std::make_shared<QuadraticOracle>(get_matrix("A"), b, params.value("c", 0.0));
  }
  if (name == "exp_solution") return std::make_shared<ExpOracle>(n, params.value("s", 2.0));
  if (name == "dual_log") return std::make_shared<LogOracle>(n, params.value("s", 1.0));
  if (name == "cubic") return std::make_shared<CubicOracle>(get_matrix("A"), params.value("eps", 1e-2));
  throw Error(ErrorKind::usage, "unknown fixture '" + name + "'");
}

inline std::vector<std::string> fixture_names() { return {"quadratic", "exp_solution", "dual_log", "cubic"}; }

/// Node values of an oracle on the non-outside nodes of a grid.
inline GridFunction sample_oracle(const FieldOracle& oracle, std::shared_ptr<const Grid> grid) {
  std::vector<double> values(grid->size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t node = 0; node < grid->size(); ++node) {
    if (grid->kind(node) == NodeKind::outside) continue;
    const Vector x = grid->point(node);
    if (!oracle.in_domain(x))
      throw Error(ErrorKind::domain, "grid node outside the oracle domain", json{{"node", node}, {"point", to_json(x)}});
    values[node] = oracle.value(x);
  }
  return GridFunction(std::move(grid), std::move(values));
}

}  // namespace malab
