#pragma once

/**
 * @file ma_solver.hpp
 * @brief Damped Newton solver for the Dirichlet problem of the Monge-Ampère equation
 *        in log form, on either Legendre side.
 *
 * Dual side:   log det D^2 u + d.grad u + d0 = 0
 * Primal side: log det D^2 f - d.x - d0 = 0
 *
 * Unknowns are the interior nodes of a grid built with MaskPolicy{1, false}.  Second
 * differences along e_a and e_a +- e_b use the Shortley-Weller cut-cell form whenever the
 * neighbor is not interior, taking the Dirichlet value where the stencil ray leaves the
 * domain; the scheme is exact on quadratics.
 */

#include "malab/oracle.hpp"

#include <Eigen/SparseLU>

#include <functional>

namespace malab {

using BoundaryFunction = std::function<double(const Vector&)>;

struct SolverConfig {
  int max_newton_iters = 50;
  double residual_tol = 1e-10;
  double damping = 0.5;
  double min_step = std::ldexp(1.0, -20);
  std::string init = "quadratic";  // or "given"
  int threads = 1;

  void validate() const {
    if (max_newton_iters < 1 || !(residual_tol > 0) || !(damping > 0 && damping < 1) || !(min_step > 0))
      throw Error(ErrorKind::usage, "invalid solver configuration");
    if (init != "quadratic" && init != "given") throw Error(ErrorKind::usage, "solver init must be 'quadratic' or 'given'");
  }
  json to_json() const {
    return json{{"max_newton_iters", max_newton_iters}, {"residual_tol", residual_tol}, {"damping", damping},
                {"min_step", min_step}, {"init", init}};
  }
};

struct SolverReport {
  int iterations = 0;
  double final_residual = 0.0;
  std::vector<double> history;
  double min_hessian_eigenvalue = 0.0;
  int continuation_stages = 0;

  json to_json() const {
    return json{{"iterations", iterations}, {"final_residual", final_residual}, {"history", history},
                {"min_hessian_eigenvalue", min_hessian_eigenvalue}, {"continuation_stages", continuation_stages}};
  }
};

/// Grid suited to newton_solve: spacing h, one layer of padding, strict interior.
inline std::shared_ptr<const Grid> solver_grid(const ConvexDomain& domain, double h) {
  return std::make_shared<const Grid>(Grid::padded(domain, h, MaskPolicy{1, false}));
}

namespace detail {

/// Linear combination of unknown values and boundary samples.
struct LinearForm {
  std::vector<std::pair<int, double>> unknowns;
  std::vector<std::pair<int, double>> samples;

  double eval(const Vector& u, const Vector& b) const {
    double s = 0.0;
    for (const auto& [j, c] : unknowns) s += c * u(j);
    for (const auto& [k, c] : samples) s += c * b(k);
    return s;
  }
};

/// Discrete operators of one interior node: Hessian entries (upper triangle, row-major)
/// and gradient components.
struct NodeOperator {
  std::size_t node = 0;
  Vector x;
  std::vector<LinearForm> hess;
  std::vector<LinearForm> grad;
};

/// Fixed geometry of a Dirichlet problem: unknown numbering, per-node operators and the
/// boundary sample points where Dirichlet data enters.
class Discretization {
 public:
  Discretization(const ConvexDomain& domain, std::shared_ptr<const Grid> grid) : grid_(std::move(grid)) {
    const Grid& g = *grid_;
    const int n = g.dim();
    unknown_of_.assign(g.size(), -1);
    for (std::size_t node = 0; node < g.size(); ++node)
      if (g.kind(node) == NodeKind::interior) {
        unknown_of_[node] = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
      }
    for (int a = 0; a < n; ++a) {
      std::vector<int> seen(static_cast<std::size_t>(g.resolution()[static_cast<std::size_t>(a)]), 0);
      for (std::size_t node : nodes_) seen[static_cast<std::size_t>(g.multi_index(node)[static_cast<std::size_t>(a)])] = 1;
      if (std::count(seen.begin(), seen.end(), 1) < 9)
        throw Error(ErrorKind::precondition, "grid must resolve the domain with at least 9 interior nodes per axis");
    }
    ops_.reserve(nodes_.size());
    for (std::size_t node : nodes_) ops_.push_back(build(domain, node));
  }

  const Grid& grid() const noexcept { return *grid_; }
  std::shared_ptr<const Grid> grid_ptr() const noexcept { return grid_; }
  const std::vector<std::size_t>& nodes() const noexcept { return nodes_; }
  const std::vector<NodeOperator>& operators() const noexcept { return ops_; }
  const std::vector<Vector>& sample_points() const noexcept { return samples_; }
  int unknown(std::size_t node) const { return unknown_of_[node]; }

  Vector sample(const BoundaryFunction& g) const {
    Vector b(static_cast<Eigen::Index>(samples_.size()));
    for (std::size_t k = 0; k < samples_.size(); ++k) b(static_cast<Eigen::Index>(k)) = g(samples_[k]);
    return b;
  }

 private:
  // Second difference along the step vector v (estimates v'Hv) and first difference
  // (estimates grad.v), each as linear forms.
  std::pair<LinearForm, LinearForm> directional(const ConvexDomain& domain, std::size_t node, const Vector& x,
                                                const std::vector<int>& offset, const Vector& v) {
    const int self = unknown_of_[node];
    double tp = 1.0, tm = 1.0;
    LinearForm plus, minus;
    auto side = [&](int sign, double& t, LinearForm& out) {
      std::vector<int> off = offset;
      for (int& o : off) o *= sign;
      const auto nb = grid_->neighbor(node, off);
      if (nb && unknown_of_[*nb] >= 0) {
        out.unknowns.push_back({unknown_of_[*nb], 1.0});
        t = 1.0;
        return;
      }
      t = std::min(1.0, domain.ray_exit(x, sign * v));
      if (t <= 0.0) throw Error(ErrorKind::domain, "interior node lies on the domain boundary", json{{"node", node}});
      out.samples.push_back({static_cast<int>(samples_.size()), 1.0});
      samples_.push_back(x + sign * t * v);
    };
    side(1, tp, plus);
    side(-1, tm, minus);
    auto combine = [&](double cp, double cm, double c0) {
      LinearForm f;
      for (const auto& [j, c] : plus.unknowns) f.unknowns.push_back({j, cp * c});
      for (const auto& [k, c] : plus.samples) f.samples.push_back({k, cp * c});
      for (const auto& [j, c] : minus.unknowns) f.unknowns.push_back({j, cm * c});
      for (const auto& [k, c] : minus.samples) f.samples.push_back({k, cm * c});
      f.unknowns.push_back({self, c0});
      return f;
    };
    const double s = 2.0 / (tp + tm);
    LinearForm second = combine(s / tp, s / tm, -s / tp - s / tm);
    const double den = tp * tm * (tp + tm);
    LinearForm first = combine(tm * tm / den, -tp * tp / den, (tp * tp - tm * tm) / den);
    return {second, first};
  }

  static LinearForm scaled_difference(const LinearForm& a, const LinearForm& b, double scale) {
    LinearForm f;
    for (const auto& [j, c] : a.unknowns) f.unknowns.push_back({j, scale * c});
    for (const auto& [k, c] : a.samples) f.samples.push_back({k, scale * c});
    for (const auto& [j, c] : b.unknowns) f.unknowns.push_back({j, -scale * c});
    for (const auto& [k, c] : b.samples) f.samples.push_back({k, -scale * c});
    return f;
  }

  NodeOperator build(const ConvexDomain& domain, std::size_t node) {
    const int n = grid_->dim();
    const Vector& h = grid_->spacing();
    NodeOperator op{node, grid_->point(node), {}, {}};
    std::vector<LinearForm> axis_second(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a) {
      std::vector<int> off(static_cast<std::size_t>(n), 0);
      off[static_cast<std::size_t>(a)] = 1;
      Vector v = Vector::Zero(n);
      v(a) = h(a);
      auto [second, first] = directional(domain, node, op.x, off, v);
      for (auto& t : second.unknowns) t.second /= h(a) * h(a);
      for (auto& t : second.samples) t.second /= h(a) * h(a);
      for (auto& t : first.unknowns) t.second /= h(a);
      for (auto& t : first.samples) t.second /= h(a);
      axis_second[static_cast<std::size_t>(a)] = std::move(second);
      op.grad.push_back(std::move(first));
    }
    for (int a = 0; a < n; ++a)
      for (int b = a; b < n; ++b) {
        if (a == b) {
          op.hess.push_back(axis_second[static_cast<std::size_t>(a)]);
          continue;
        }
        std::vector<int> op_off(static_cast<std::size_t>(n), 0), om_off(static_cast<std::size_t>(n), 0);
        op_off[static_cast<std::size_t>(a)] = om_off[static_cast<std::size_t>(a)] = 1;
        op_off[static_cast<std::size_t>(b)] = 1;
        om_off[static_cast<std::size_t>(b)] = -1;
        Vector vp = Vector::Zero(n), vm = Vector::Zero(n);
        vp(a) = vm(a) = h(a);
        vp(b) = h(b);
        vm(b) = -h(b);
        const LinearForm sp = directional(domain, node, op.x, op_off, vp).first;
        const LinearForm sm = directional(domain, node, op.x, om_off, vm).first;
        op.hess.push_back(scaled_difference(sp, sm, 1.0 / (4.0 * h(a) * h(b))));
      }
    return op;
  }

  std::shared_ptr<const Grid> grid_;
  std::vector<int> unknown_of_;
  std::vector<std::size_t> nodes_;
  std::vector<NodeOperator> ops_;
  std::vector<Vector> samples_;
};

inline Matrix assemble_hessian(const NodeOperator& op, const Vector& u, const Vector& b, int n) {
  Matrix H(n, n);
  std::size_t k = 0;
  for (int a = 0; a < n; ++a)
    for (int c = a; c < n; ++c) H(a, c) = H(c, a) = op.hess[k++].eval(u, b);
  return H;
}

struct Evaluation {
  bool positive = true;
  std::size_t bad_node = 0;
  Vector residual;
  std::vector<Matrix> hinv;
  double min_eigenvalue = std::numeric_limits<double>::infinity();
  double max_abs() const { return residual.size() ? residual.cwiseAbs().maxCoeff() : 0.0; }
};

inline Evaluation evaluate(const Discretization& disc, const Vector& u, const Vector& b, const DriftCoefficients& drift,
                           Side side, int threads, bool want_eigen = false) {
  const int n = disc.grid().dim();
  const auto& ops = disc.operators();
  Evaluation ev;
  ev.residual.resize(static_cast<Eigen::Index>(ops.size()));
  ev.hinv.resize(ops.size());
  std::vector<unsigned char> ok(ops.size(), 1);
  std::vector<double> lam(ops.size(), 0.0);
  parallel_for(ops.size(), threads, [&](std::size_t i) {
    const Matrix H = assemble_hessian(ops[i], u, b, n);
    Eigen::LLT<Matrix> llt(H);
    if (llt.info() != Eigen::Success) {
      ok[i] = 0;
      return;
    }
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    if (!(logdet > std::log(1e-14))) {
      ok[i] = 0;
      return;
    }
    double r;
    if (side == Side::dual) {
      double dg = 0.0;
      for (int a = 0; a < n; ++a) dg += drift.d(a) * ops[i].grad[static_cast<std::size_t>(a)].eval(u, b);
      r = logdet + dg + drift.d0;
    } else {
      r = logdet - drift.d.dot(ops[i].x) - drift.d0;
    }
    ev.residual(static_cast<Eigen::Index>(i)) = r;
    ev.hinv[i] = llt.solve(Matrix::Identity(n, n));
    if (want_eigen) lam[i] = Eigen::SelfAdjointEigenSolver<Matrix>(H, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  });
  for (std::size_t i = 0; i < ops.size(); ++i)
    if (!ok[i]) {
      ev.positive = false;
      ev.bad_node = ops[i].node;
      return ev;
    }
  if (want_eigen) ev.min_eigenvalue = *std::min_element(lam.begin(), lam.end());
  return ev;
}

inline Eigen::SparseMatrix<double> jacobian(const Discretization& disc, const Evaluation& ev, const DriftCoefficients& drift, Side side) {
  const int n = disc.grid().dim();
  const auto& ops = disc.operators();
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const Matrix& Hi = ev.hinv[i];
    std::size_t k = 0;
    for (int a = 0; a < n; ++a)
      for (int c = a; c < n; ++c) {
        const double w = a == c ? Hi(a, a) : 2.0 * Hi(a, c);
        for (const auto& [j, coef] : ops[i].hess[k].unknowns) trips.emplace_back(static_cast<int>(i), j, w * coef);
        ++k;
      }
    if (side == Side::dual)
      for (int a = 0; a < n; ++a)
        if (drift.d(a) != 0.0)
          for (const auto& [j, coef] : ops[i].grad[static_cast<std::size_t>(a)].unknowns)
            trips.emplace_back(static_cast<int>(i), j, drift.d(a) * coef);
  }
  const auto m = static_cast<int>(ops.size());
  Eigen::SparseMatrix<double> J(m, m);
  J.setFromTriplets(trips.begin(), trips.end());
  return J;
}

/// Derivative of the residual with respect to the Dirichlet samples, applied to db.
inline Vector boundary_derivative(const Discretization& disc, const Evaluation& ev, const DriftCoefficients& drift, Side side,
                                  const Vector& db) {
  const int n = disc.grid().dim();
  const auto& ops = disc.operators();
  Vector out = Vector::Zero(static_cast<Eigen::Index>(ops.size()));
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const Matrix& Hi = ev.hinv[i];
    double s = 0.0;
    std::size_t k = 0;
    for (int a = 0; a < n; ++a)
      for (int c = a; c < n; ++c) {
        const double w = a == c ? Hi(a, a) : 2.0 * Hi(a, c);
        for (const auto& [j, coef] : ops[i].hess[k].samples) s += w * coef * db(j);
        ++k;
      }
    if (side == Side::dual)
      for (int a = 0; a < n; ++a)
        for (const auto& [j, coef] : ops[i].grad[static_cast<std::size_t>(a)].samples) s += drift.d(a) * coef * db(j);
    out(static_cast<Eigen::Index>(i)) = s;
  }
  return out;
}

/// Least-squares paraboloid through the Dirichlet samples, made convex and scaled so its
/// determinant matches the equation at the domain centroid.
inline QuadraticOracle initial_quadratic(const std::vector<Vector>& pts, const Vector& vals, const Vector& centroid,
                                         const DriftCoefficients& drift, Side side) {
  const int n = static_cast<int>(centroid.size());
  const int nq = n * (n + 1) / 2;
  auto quad_row = [&](const Vector& x) {
    Vector r(nq);
    int k = 0;
    for (int a = 0; a < n; ++a)
      for (int c = a; c < n; ++c) r(k++) = a == c ? 0.5 * x(a) * x(a) : x(a) * x(c);
    return r;
  };
  const auto m = static_cast<Eigen::Index>(pts.size());
  Matrix M(m, nq + n + 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Vector& x = pts[static_cast<std::size_t>(i)];
    M.row(i) << quad_row(x).transpose(), x.transpose(), 1.0;
  }
  const Vector coef = M.completeOrthogonalDecomposition().solve(vals);
  Matrix A(n, n);
  int k = 0;
  for (int a = 0; a < n; ++a)
    for (int c = a; c < n; ++c) A(a, c) = A(c, a) = coef(k++);
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  const double top = std::max(es.eigenvalues().maxCoeff(), 1e-3);
  A = es.eigenvectors() * es.eigenvalues().cwiseMax(0.1 * top).asDiagonal() * es.eigenvectors().transpose();
  Vector b = coef.segment(nq, n);
  double c0 = coef(nq + n);
  Matrix L(m, n + 1);
  for (Eigen::Index i = 0; i < m; ++i) L.row(i) << pts[static_cast<std::size_t>(i)].transpose(), 1.0;
  for (int round = 0; round < 4; ++round) {
    const double logdet = std::log(A.determinant());
    const double target = side == Side::dual ? -drift.d.dot(A * centroid + b) - drift.d0 : drift.d.dot(centroid) + drift.d0;
    A *= std::exp((target - logdet) / n);
    Vector rhs(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vector& x = pts[static_cast<std::size_t>(i)];
      rhs(i) = vals(i) - 0.5 * x.dot(A * x);
    }
    const Vector lin = L.completeOrthogonalDecomposition().solve(rhs);
    b = lin.head(n);
    c0 = lin(n);
  }
  return QuadraticOracle(A, b, c0);
}

struct StageResult {
  bool ok = false;
  ErrorKind failure = ErrorKind::non_convergence;
  std::string message;
  json details;
  Vector u;
  std::vector<double> history;
  int iterations = 0;
};

inline StageResult newton_stage(const Discretization& disc, Vector u, const Vector& b, const DriftCoefficients& drift, Side side,
                                const SolverConfig& cfg, double tol) {
  StageResult out;
  Evaluation ev = evaluate(disc, u, b, drift, side, cfg.threads);
  if (!ev.positive) {
    out.failure = ErrorKind::convexity_breakdown;
    out.message = "initial iterate is not convex";
    out.details = json{{"node", ev.bad_node}};
    return out;
  }
  for (int it = 0;; ++it) {
    const double res = ev.max_abs();
    out.history.push_back(res);
    if (res <= tol) {
      out.ok = true;
      out.u = std::move(u);
      out.iterations = it;
      return out;
    }
    if (it == cfg.max_newton_iters) {
      out.failure = ErrorKind::non_convergence;
      out.message = "Newton iteration cap reached";
      out.details = json{{"history", out.history}};
      return out;
    }
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(jacobian(disc, ev, drift, side));
    if (lu.info() != Eigen::Success) {
      out.failure = ErrorKind::non_convergence;
      out.message = "singular Newton system";
      out.details = json{{"history", out.history}};
      return out;
    }
    const Vector delta = lu.solve(-ev.residual);
    bool accepted = false, lost_positivity = false;
    std::size_t bad = 0;
    for (double t = 1.0; t >= cfg.min_step; t *= cfg.damping) {
      Vector trial = u + t * delta;
      Evaluation et = evaluate(disc, trial, b, drift, side, cfg.threads);
      if (!et.positive) {
        lost_positivity = true;
        bad = et.bad_node;
        continue;
      }
      lost_positivity = false;
      if (et.max_abs() < res) {
        u = std::move(trial);
        ev = std::move(et);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      out.failure = lost_positivity ? ErrorKind::convexity_breakdown : ErrorKind::non_convergence;
      out.message = lost_positivity ? "Newton step loses convexity at the damping floor" : "no residual decrease at the damping floor";
      out.details = json{{"history", out.history}};
      if (lost_positivity) out.details["node"] = bad;
      return out;
    }
  }
}

}  // namespace detail

/// Pointwise residual on the interior nodes of u's grid (zero on boundary nodes), from
/// the uniform central Hessian.  With a domain and Dirichlet data the solver's cut-cell
/// operator is used instead, so a converged solution reports its own residual.
inline GridFunction residual_field(const GridFunction& u, const DriftCoefficients& drift, Side side) {
  const Grid& g = u.grid();
  std::vector<double> r(g.size(), 0.0);
  for (std::size_t node : g.nodes_of_kind(NodeKind::interior)) {
    const Matrix H = fd_hessian(u, node);
    Eigen::LLT<Matrix> llt(H);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::convexity, "Hessian is not positive definite", json{{"node", node}});
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    r[node] = side == Side::dual ? logdet + drift.d.dot(fd_gradient(u, node)) + drift.d0
                                 : logdet - drift.d.dot(g.point(node)) - drift.d0;
  }
  return GridFunction(u.grid_ptr(), std::move(r));
}

inline GridFunction residual_field(const GridFunction& u, const DriftCoefficients& drift, Side side, const ConvexDomain& domain,
                                   const BoundaryFunction& boundary) {
  const detail::Discretization disc(domain, u.grid_ptr());
  Vector uv(static_cast<Eigen::Index>(disc.nodes().size()));
  for (std::size_t i = 0; i < disc.nodes().size(); ++i) uv(static_cast<Eigen::Index>(i)) = u[disc.nodes()[i]];
  const auto ev = detail::evaluate(disc, uv, disc.sample(boundary), drift, side, 1);
  if (!ev.positive) throw Error(ErrorKind::convexity, "Hessian is not positive definite", json{{"node", ev.bad_node}});
  std::vector<double> r(u.grid().size(), 0.0);
  for (std::size_t i = 0; i < disc.nodes().size(); ++i) r[disc.nodes()[i]] = ev.residual(static_cast<Eigen::Index>(i));
  return GridFunction(u.grid_ptr(), std::move(r));
}

struct SolveResult {
  GridFunction solution;
  SolverReport report;
};

/// Dirichlet solve on `grid` (interior nodes are unknowns).  `initial` is used when
/// config.init == "given".
inline SolveResult newton_solve(const ConvexDomain& domain, std::shared_ptr<const Grid> grid, const DriftCoefficients& drift,
                                Side side, const BoundaryFunction& boundary, const SolverConfig& config = {},
                                const GridFunction* initial = nullptr) {
  config.validate();
  if (drift.d.size() != domain.dim() || grid->dim() != domain.dim())
    throw Error(ErrorKind::usage, "drift, grid and domain dimensions disagree");
  const detail::Discretization disc(domain, grid);
  const auto m = static_cast<Eigen::Index>(disc.nodes().size());
  const Vector target = disc.sample(boundary);

  Vector u0(m);
  std::optional<QuadraticOracle> q;
  if (config.init == "given") {
    if (!initial) throw Error(ErrorKind::usage, "init 'given' requires an initial field");
    for (Eigen::Index i = 0; i < m; ++i) u0(i) = (*initial)[disc.nodes()[static_cast<std::size_t>(i)]];
  } else {
    q.emplace(detail::initial_quadratic(disc.sample_points(), target, domain.centroid(), drift, side));
    for (Eigen::Index i = 0; i < m; ++i) u0(i) = q->value(disc.grid().point(disc.nodes()[static_cast<std::size_t>(i)]));
  }

  SolverReport report;
  detail::StageResult stage;
  if (!q) {
    stage = detail::newton_stage(disc, u0, target, drift, side, config, config.residual_tol);
  } else {
    // Continuation in the Dirichlet data from the trace of the initial quadratic, on which
    // the quadratic itself is an exact discrete solution up to its determinant mismatch.
    // Each stage takes a linearized predictor step in the data, then Newton corrects.
    Vector qb(static_cast<Eigen::Index>(disc.sample_points().size()));
    for (std::size_t k = 0; k < disc.sample_points().size(); ++k) qb(static_cast<Eigen::Index>(k)) = q->value(disc.sample_points()[k]);
    const double loose = std::max(config.residual_tol, 1e-6);
    // Adaptive march in a parameter from 0 to 1: each accepted step doubles the stride,
    // each failure halves it down to 1/4096.
    auto march = [&](Vector u, const std::function<detail::StageResult(double, double, const Vector&)>& step) {
      detail::StageResult last;
      double s = 0.0, ds = 1.0;
      while (true) {
        const double next = std::min(1.0, s + ds);
        detail::StageResult attempt = step(s, next, u);
        if (attempt.ok) {
          ++report.continuation_stages;
          s = next;
          u = attempt.u;
          last = std::move(attempt);
          if (s == 1.0) return last;
          ds *= 2.0;
        } else {
          ds *= 0.5;
          if (ds < 1.0 / 4096) return attempt;
        }
      }
    };

    // Anchor: the equation with the quadratic's own trace as data.  When the drift makes
    // the quadratic a poor start, the drift is switched on gradually with d0 adjusted so
    // the quadratic stays exact at the centroid.
    stage = detail::newton_stage(disc, u0, qb, drift, side, config, loose);
    if (!stage.ok) {
      const Vector c = domain.centroid();
      const double logdet_q = std::log(q->matrix().determinant());
      const Vector grad_c = q->jet(c).gradient;
      auto drift_at = [&](double tau) {
        DriftCoefficients dr = drift;
        dr.d = tau * drift.d;
        dr.d0 = side == Side::dual ? -logdet_q - tau * drift.d.dot(grad_c) : logdet_q - tau * drift.d.dot(c);
        return dr;
      };
      stage = march(u0, [&](double, double next, const Vector& start) {
        return detail::newton_stage(disc, start, qb, drift_at(next), side, config, loose);
      });
    }
    if (stage.ok) {
      // Continuation in the Dirichlet data from the trace of the initial quadratic.  Each
      // stage takes a linearized predictor step in the data, then Newton corrects.
      stage = march(stage.u, [&](double s, double next, const Vector& u) {
        const Vector b_now = qb + s * (target - qb), b_next = qb + next * (target - qb);
        const detail::Evaluation ev = detail::evaluate(disc, u, b_now, drift, side, config.threads);
        Vector start = u;
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(detail::jacobian(disc, ev, drift, side));
        if (lu.info() == Eigen::Success) {
          Vector pred = u + lu.solve(-(ev.residual + detail::boundary_derivative(disc, ev, drift, side, b_next - b_now)));
          if (detail::evaluate(disc, pred, b_next, drift, side, config.threads).positive) start = std::move(pred);
        }
        return detail::newton_stage(disc, start, b_next, drift, side, config, next < 1.0 ? loose : config.residual_tol);
      });
    }
  }
  if (!stage.ok) {
    json details = stage.details;
    details["continuation_stages"] = report.continuation_stages;
    throw Error(stage.failure, stage.message, details);
  }

  const auto final_eval = detail::evaluate(disc, stage.u, target, drift, side, config.threads, true);
  report.iterations = stage.iterations;
  report.history = stage.history;
  report.final_residual = final_eval.max_abs();
  report.min_hessian_eigenvalue = final_eval.min_eigenvalue;

  std::vector<double> values(grid->size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t node = 0; node < grid->size(); ++node)
    if (grid->kind(node) == NodeKind::boundary) values[node] = boundary(grid->point(node));
  for (Eigen::Index i = 0; i < m; ++i) values[disc.nodes()[static_cast<std::size_t>(i)]] = stage.u(i);
  return SolveResult{GridFunction(grid, std::move(values)), std::move(report)};
}

}  // namespace malab
