#pragma once

/**
 * @file grid.hpp
 * @brief Masked rectangular grids, sampled fields and central finite differences.
 */

#include "malab/convex_domain.hpp"

#include <fstream>
#include <memory>
#include <sstream>

namespace malab {

enum class NodeKind : unsigned char { interior, boundary, outside };

/// How a domain induces the node mask.
///
/// A node is interior when it lies in the domain (closed, or strictly inside when
/// `closed` is false) and every node of its (2r+1)^n neighborhood exists in the grid.
/// Boundary nodes are the remaining nodes within index distance r of an interior node;
/// their values are prescribed and never differentiated.
struct MaskPolicy {
  int stencil_radius = 2;
  bool closed = true;
};

class Grid {
 public:
  Grid(ConvexDomain domain, Vector lo, Vector hi, std::vector<int> resolution, MaskPolicy policy = {})
      : domain_(std::move(domain)), lo_(std::move(lo)), hi_(std::move(hi)), res_(std::move(resolution)), policy_(policy) {
    const int n = domain_.dim();
    if (lo_.size() != n || hi_.size() != n || static_cast<int>(res_.size()) != n)
      throw Error(ErrorKind::domain_invalid, "grid and domain dimensions disagree");
    if (policy_.stencil_radius < 1) throw Error(ErrorKind::domain_invalid, "stencil radius must be >= 1");
    h_.resize(n);
    strides_.resize(static_cast<std::size_t>(n));
    std::size_t total = 1;
    for (int a = 0; a < n; ++a) {
      if (res_[static_cast<std::size_t>(a)] < 2 || !(lo_(a) < hi_(a)))
        throw Error(ErrorKind::domain_invalid, "grid needs >= 2 nodes and lo < hi on every axis");
      h_(a) = (hi_(a) - lo_(a)) / (res_[static_cast<std::size_t>(a)] - 1);
      strides_[static_cast<std::size_t>(a)] = total;
      total *= static_cast<std::size_t>(res_[static_cast<std::size_t>(a)]);
    }
    build_mask();
  }

  /// Grid with spacing as close as possible to h covering the domain's bounding box,
  /// padded by stencil_radius nodes on every side.
  static Grid padded(const ConvexDomain& domain, double h, MaskPolicy policy = {}) {
    auto [lo, hi] = domain.bounding_box();
    const int n = domain.dim();
    std::vector<int> res(static_cast<std::size_t>(n));
    Vector glo(n), ghi(n);
    for (int a = 0; a < n; ++a) {
      const int cells = std::max(1, static_cast<int>(std::lround((hi(a) - lo(a)) / h)));
      const double ha = (hi(a) - lo(a)) / cells;
      glo(a) = lo(a) - policy.stencil_radius * ha;
      ghi(a) = hi(a) + policy.stencil_radius * ha;
      res[static_cast<std::size_t>(a)] = cells + 1 + 2 * policy.stencil_radius;
    }
    return Grid(domain, glo, ghi, std::move(res), policy);
  }

  /// Grid whose bounds are exactly the domain's bounding box.
  static Grid fitted(const ConvexDomain& domain, double h, MaskPolicy policy = {}) {
    auto [lo, hi] = domain.bounding_box();
    const int n = domain.dim();
    std::vector<int> res(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a)
      res[static_cast<std::size_t>(a)] = std::max(1, static_cast<int>(std::lround((hi(a) - lo(a)) / h))) + 1;
    return Grid(domain, lo, hi, std::move(res), policy);
  }

  int dim() const { return static_cast<int>(lo_.size()); }
  std::size_t size() const { return mask_.size(); }
  const ConvexDomain& domain() const noexcept { return domain_; }
  const Vector& lo() const noexcept { return lo_; }
  const Vector& hi() const noexcept { return hi_; }
  const Vector& spacing() const noexcept { return h_; }
  const std::vector<int>& resolution() const noexcept { return res_; }
  const MaskPolicy& policy() const noexcept { return policy_; }
  NodeKind kind(std::size_t node) const { return mask_[node]; }

  std::vector<int> multi_index(std::size_t node) const {
    std::vector<int> idx(static_cast<std::size_t>(dim()));
    for (int a = dim() - 1; a >= 0; --a) {
      idx[static_cast<std::size_t>(a)] = static_cast<int>(node / strides_[static_cast<std::size_t>(a)]);
      node %= strides_[static_cast<std::size_t>(a)];
    }
    return idx;
  }

  std::size_t linear_index(const std::vector<int>& idx) const {
    std::size_t node = 0;
    for (int a = 0; a < dim(); ++a) node += static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]) * strides_[static_cast<std::size_t>(a)];
    return node;
  }

  /// Node reached from `node` by an integer offset, if it exists in the grid.
  std::optional<std::size_t> neighbor(std::size_t node, const std::vector<int>& offset) const {
    auto idx = multi_index(node);
    for (int a = 0; a < dim(); ++a) {
      const int v = idx[static_cast<std::size_t>(a)] + offset[static_cast<std::size_t>(a)];
      if (v < 0 || v >= res_[static_cast<std::size_t>(a)]) return std::nullopt;
      idx[static_cast<std::size_t>(a)] = v;
    }
    return linear_index(idx);
  }

  Vector point(std::size_t node) const {
    const auto idx = multi_index(node);
    Vector x(dim());
    for (int a = 0; a < dim(); ++a) x(a) = lo_(a) + idx[static_cast<std::size_t>(a)] * h_(a);
    return x;
  }

  /// Index of the node nearest to x (clamped to the grid).
  std::size_t nearest_node(const Vector& x) const {
    std::vector<int> idx(static_cast<std::size_t>(dim()));
    for (int a = 0; a < dim(); ++a) {
      const long v = std::lround((x(a) - lo_(a)) / h_(a));
      idx[static_cast<std::size_t>(a)] = static_cast<int>(std::clamp<long>(v, 0, res_[static_cast<std::size_t>(a)] - 1));
    }
    return linear_index(idx);
  }

  std::vector<std::size_t> nodes_of_kind(NodeKind k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask_.size(); ++i)
      if (mask_[i] == k) out.push_back(i);
    return out;
  }

  /// True when every node within index distance `radius` of `node` is interior.
  bool deep(std::size_t node, int radius) const {
    bool ok = true;
    for_each_offset(radius, [&](const std::vector<int>& off) {
      if (!ok) return;
      auto nb = neighbor(node, off);
      ok = nb && mask_[*nb] == NodeKind::interior;
    });
    return ok;
  }

  /// Visits every offset in [-r, r]^n.
  void for_each_offset(int r, const std::function<void(const std::vector<int>&)>& fn) const {
    const int n = dim();
    std::vector<int> off(static_cast<std::size_t>(n), -r);
    while (true) {
      fn(off);
      int a = 0;
      while (a < n && ++off[static_cast<std::size_t>(a)] > r) {
        off[static_cast<std::size_t>(a)] = -r;
        ++a;
      }
      if (a == n) break;
    }
  }

  json metadata() const {
    json res = json::array();
    for (int r : res_) res.push_back(r);
    return json{{"domain", domain_.to_json()},
                {"lo", to_json(lo_)},
                {"hi", to_json(hi_)},
                {"resolution", res},
                {"spacing", to_json(h_)},
                {"stencil_radius", policy_.stencil_radius},
                {"closed", policy_.closed}};
  }

  static Grid from_metadata(const json& j) {
    MaskPolicy p{j.at("stencil_radius").get<int>(), j.at("closed").get<bool>()};
    return Grid(ConvexDomain::from_json(j.at("domain")), vector_from_json(j.at("lo")), vector_from_json(j.at("hi")),
                j.at("resolution").get<std::vector<int>>(), p);
  }

 private:
  void build_mask() {
    const std::size_t total = strides_.back() * static_cast<std::size_t>(res_.back());
    mask_.assign(total, NodeKind::outside);
    const double margin = 1e-9 * h_.minCoeff();
    const int r = policy_.stencil_radius;
    std::vector<std::size_t> interior;
    for (std::size_t node = 0; node < total; ++node) {
      const double d = domain_.depth(point(node));
      const bool inside = policy_.closed ? d >= -margin : d > margin;
      if (!inside) continue;
      const auto idx = multi_index(node);
      bool room = true;
      for (int a = 0; a < dim(); ++a)
        room = room && idx[static_cast<std::size_t>(a)] >= r && idx[static_cast<std::size_t>(a)] + r < res_[static_cast<std::size_t>(a)];
      if (room) interior.push_back(node);
    }
    for (std::size_t node : interior) mask_[node] = NodeKind::interior;
    for (std::size_t node : interior)
      for_each_offset(r, [&](const std::vector<int>& off) {
        const std::size_t nb = *neighbor(node, off);
        if (mask_[nb] == NodeKind::outside) mask_[nb] = NodeKind::boundary;
      });
  }

  ConvexDomain domain_;
  Vector lo_, hi_, h_;
  std::vector<int> res_;
  MaskPolicy policy_;
  std::vector<std::size_t> strides_;
  std::vector<NodeKind> mask_;
};

/// Scalar values on the non-outside nodes of a grid (NaN on outside nodes).
class GridFunction {
 public:
  GridFunction(std::shared_ptr<const Grid> grid, std::vector<double> values)
      : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_->size()) throw Error(ErrorKind::io, "value count does not match the grid");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (grid_->kind(i) == NodeKind::outside) {
        values_[i] = std::numeric_limits<double>::quiet_NaN();
      } else if (!std::isfinite(values_[i])) {
        throw Error(ErrorKind::domain, "non-finite value on a grid node", json{{"node", i}});
      }
    }
  }

  const Grid& grid() const noexcept { return *grid_; }
  std::shared_ptr<const Grid> grid_ptr() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double operator[](std::size_t node) const { return values_[node]; }

  /// Maximum |a - b| over nodes of the given kind in both fields (same grid).
  double max_difference(const GridFunction& other, NodeKind kind = NodeKind::interior) const {
    double m = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (grid_->kind(i) == kind) m = std::max(m, std::abs(values_[i] - other.values_[i]));
    return m;
  }

 private:
  std::shared_ptr<const Grid> grid_;
  std::vector<double> values_;
};

namespace detail {

inline std::vector<int> unit_offset(int n, int axis, int step) {
  std::vector<int> off(static_cast<std::size_t>(n), 0);
  off[static_cast<std::size_t>(axis)] = step;
  return off;
}

/// Value at node + offset; throws a stencil error when the node is missing or outside.
inline double stencil_value(const GridFunction& f, std::size_t node, const std::vector<int>& off) {
  const auto nb = f.grid().neighbor(node, off);
  if (!nb || f.grid().kind(*nb) == NodeKind::outside)
    throw Error(ErrorKind::stencil, "finite-difference stencil leaves the grid", json{{"node", node}});
  return f[*nb];
}

}  // namespace detail

inline void require_interior(const Grid& g, std::size_t node) {
  if (node >= g.size() || g.kind(node) != NodeKind::interior)
    throw Error(ErrorKind::stencil, "derivatives are only taken at interior nodes", json{{"node", node}});
}

inline Vector fd_gradient(const GridFunction& f, std::size_t node) {
  require_interior(f.grid(), node);
  const int n = f.grid().dim();
  const Vector& h = f.grid().spacing();
  Vector g(n);
  for (int a = 0; a < n; ++a)
    g(a) = (detail::stencil_value(f, node, detail::unit_offset(n, a, 1)) -
            detail::stencil_value(f, node, detail::unit_offset(n, a, -1))) /
           (2.0 * h(a));
  return g;
}

inline Matrix fd_hessian(const GridFunction& f, std::size_t node) {
  require_interior(f.grid(), node);
  const int n = f.grid().dim();
  const Vector& h = f.grid().spacing();
  const double f0 = f[node];
  Matrix H(n, n);
  for (int a = 0; a < n; ++a) {
    H(a, a) = (detail::stencil_value(f, node, detail::unit_offset(n, a, 1)) - 2.0 * f0 +
               detail::stencil_value(f, node, detail::unit_offset(n, a, -1))) /
              (h(a) * h(a));
    for (int b = a + 1; b < n; ++b) {
      double s = 0.0;
      for (int sa : {-1, 1})
        for (int sb : {-1, 1}) {
          std::vector<int> off(static_cast<std::size_t>(n), 0);
          off[static_cast<std::size_t>(a)] = sa;
          off[static_cast<std::size_t>(b)] = sb;
          s += sa * sb * detail::stencil_value(f, node, off);
        }
      H(a, b) = H(b, a) = s / (4.0 * h(a) * h(b));
    }
  }
  return H;
}

/// Width-5 centered stencil for f_aaa; second differences composed with a centered first
/// difference for f_aab; the 8-point product stencil for distinct indices.
inline Tensor3 fd_third(const GridFunction& f, std::size_t node) {
  require_interior(f.grid(), node);
  const int n = f.grid().dim();
  const Vector& h = f.grid().spacing();
  auto at = [&](std::vector<int> off) { return detail::stencil_value(f, node, off); };
  Tensor3 T(n);
  for (int a = 0; a < n; ++a) {
    const double v = (at(detail::unit_offset(n, a, 2)) - 2.0 * at(detail::unit_offset(n, a, 1)) +
                      2.0 * at(detail::unit_offset(n, a, -1)) - at(detail::unit_offset(n, a, -2))) /
                     (2.0 * h(a) * h(a) * h(a));
    T.set_sym(a, a, a, v);
    for (int b = 0; b < n; ++b) {
      if (b == a) continue;
      auto second_along_a = [&](int shift_b) {
        std::vector<int> p(static_cast<std::size_t>(n), 0), z(static_cast<std::size_t>(n), 0), m(static_cast<std::size_t>(n), 0);
        p[static_cast<std::size_t>(a)] = 1;
        m[static_cast<std::size_t>(a)] = -1;
        p[static_cast<std::size_t>(b)] = z[static_cast<std::size_t>(b)] = m[static_cast<std::size_t>(b)] = shift_b;
        return (at(p) - 2.0 * at(z) + at(m)) / (h(a) * h(a));
      };
      T.set_sym(a, a, b, (second_along_a(1) - second_along_a(-1)) / (2.0 * h(b)));
    }
  }
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      for (int c = b + 1; c < n; ++c) {
        double s = 0.0;
        for (int sa : {-1, 1})
          for (int sb : {-1, 1})
            for (int sc : {-1, 1}) {
              std::vector<int> off(static_cast<std::size_t>(n), 0);
              off[static_cast<std::size_t>(a)] = sa;
              off[static_cast<std::size_t>(b)] = sb;
              off[static_cast<std::size_t>(c)] = sc;
              s += sa * sb * sc * at(off);
            }
        T.set_sym(a, b, c, s / (8.0 * h(a) * h(b) * h(c)));
      }
  return T;
}

/// Value plus FD derivatives up to order 3 at an interior node.
inline Jet fd_jet(const GridFunction& f, std::size_t node) {
  return Jet{f[node], fd_gradient(f, node), fd_hessian(f, node), fd_third(f, node)};
}

/// Result of `differentiate`: exactly one of the members is populated.
struct Derivative {
  int order = 0;
  Vector gradient;
  Matrix hessian;
  Tensor3 third;
};

inline Derivative differentiate(const GridFunction& f, std::size_t node, int order) {
  switch (order) {
    case 1: return Derivative{1, fd_gradient(f, node), {}, {}};
    case 2: return Derivative{2, {}, fd_hessian(f, node), {}};
    case 3: return Derivative{3, {}, {}, fd_third(f, node)};
    default: throw Error(ErrorKind::precondition, "derivative order must be 1, 2 or 3");
  }
}

struct ConvexityReport {
  double min_eigenvalue = std::numeric_limits<double>::infinity();
  std::size_t worst_node = 0;
  bool convex = false;
};

/// Smallest FD-Hessian eigenvalue over interior nodes. Never throws on stencil problems:
/// nodes whose stencil is incomplete are skipped.
inline ConvexityReport check_convex(const GridFunction& f) {
  ConvexityReport rep;
  for (std::size_t node = 0; node < f.grid().size(); ++node) {
    if (f.grid().kind(node) != NodeKind::interior) continue;
    Matrix H;
    try {
      H = fd_hessian(f, node);
    } catch (const Error&) {
      continue;
    }
    const double lam = Eigen::SelfAdjointEigenSolver<Matrix>(H, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    if (lam < rep.min_eigenvalue) {
      rep.min_eigenvalue = lam;
      rep.worst_node = node;
    }
  }
  rep.convex = rep.min_eigenvalue > 0 && std::isfinite(rep.min_eigenvalue);
  return rep;
}

// ---- CSV / sidecar JSON ----

inline std::string to_csv(const GridFunction& f) {
  std::ostringstream out;
  const int n = f.grid().dim();
  for (int a = 0; a < n; ++a) out << 'x' << (a + 1) << ',';
  out << "value\n";
  for (std::size_t node = 0; node < f.grid().size(); ++node) {
    if (f.grid().kind(node) == NodeKind::outside) continue;
    const Vector x = f.grid().point(node);
    for (int a = 0; a < n; ++a) out << format_double(x(a)) << ',';
    out << format_double(f[node]) << '\n';
  }
  return out.str();
}

/// Parses the CSV produced by to_csv against the grid described by `metadata`.
inline GridFunction from_csv(const std::string& csv, const json& metadata) {
  auto grid = std::make_shared<const Grid>(Grid::from_metadata(metadata));
  const int n = grid->dim();
  std::vector<double> values(grid->size(), std::numeric_limits<double>::quiet_NaN());
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::io, "empty CSV");
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(std::stod(cell));
    if (static_cast<int>(cells.size()) != n + 1) throw Error(ErrorKind::io, "CSV row has wrong arity", json{{"row", row}});
    Vector x(n);
    for (int a = 0; a < n; ++a) x(a) = cells[static_cast<std::size_t>(a)];
    const std::size_t node = grid->nearest_node(x);
    if ((grid->point(node) - x).cwiseAbs().maxCoeff() > 1e-9 * grid->spacing().minCoeff())
      throw Error(ErrorKind::io, "CSV point is not a grid node", json{{"row", row}});
    values[node] = cells.back();
  }
  for (std::size_t i = 0; i < values.size(); ++i)
    if (grid->kind(i) != NodeKind::outside && !std::isfinite(values[i]))
      throw Error(ErrorKind::io, "CSV is missing a non-outside node", json{{"node", i}});
  return GridFunction(grid, std::move(values));
}

}  // namespace malab
