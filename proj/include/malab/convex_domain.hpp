#pragma once

/**
 * @file convex_domain.hpp
 * @brief Bounded convex domains, centroid-centered minimum-volume ellipsoids and the
 *        affine normalization B(0, n^{-3/2}) ⊂ T(Ω) ⊂ B(0, 1).
 *
 * Polytopes are stored by half-spaces; their vertices, centroid and volume are computed
 * once at construction by clipping a bounding box (n = 2 and n = 3 only).
 */

#include "malab/core.hpp"

#include <Eigen/Eigenvalues>

#include <limits>
#include <memory>
#include <optional>
#include <variant>

namespace malab {

struct Box {
  Vector lo;
  Vector hi;
};

struct Ball {
  Vector center;
  double radius = 1.0;
};

struct Halfspace {
  Vector normal;  // unit length
  double offset = 0.0;
};

namespace detail {

/// Clipped geometry of a bounded polytope.
struct PolytopeGeometry {
  std::vector<Vector> vertices;
  Vector centroid;
  double volume = 0.0;
  Vector lo, hi;  // bounding box
};

inline constexpr double kHuge = 1e7;

// ---- n = 2: Sutherland–Hodgman on a CCW polygon ----

using Polygon = std::vector<Eigen::Vector2d>;

inline Polygon clip_polygon(const Polygon& poly, const Eigen::Vector2d& a, double b) {
  Polygon out;
  const std::size_t m = poly.size();
  for (std::size_t i = 0; i < m; ++i) {
    const Eigen::Vector2d& p = poly[i];
    const Eigen::Vector2d& q = poly[(i + 1) % m];
    const double sp = a.dot(p) - b, sq = a.dot(q) - b;
    if (sp <= 0) out.push_back(p);
    if ((sp < 0 && sq > 0) || (sp > 0 && sq < 0)) {
      const double t = sp / (sp - sq);
      out.push_back(p + t * (q - p));
    }
  }
  return out;
}

inline Polygon clip_box_2d(const std::vector<Halfspace>& hs, const Eigen::Vector2d& lo,
                           const Eigen::Vector2d& hi) {
  Polygon poly{{lo.x(), lo.y()}, {hi.x(), lo.y()}, {hi.x(), hi.y()}, {lo.x(), hi.y()}};
  for (const auto& h : hs) {
    poly = clip_polygon(poly, Eigen::Vector2d(h.normal(0), h.normal(1)), h.offset);
    if (poly.size() < 3) return {};
  }
  return poly;
}

inline PolytopeGeometry geometry_from_polygon(const Polygon& poly) {
  PolytopeGeometry g;
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : poly) c += p;
  c /= static_cast<double>(poly.size());
  Eigen::Vector2d weighted = Eigen::Vector2d::Zero();
  double area = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d& p = poly[i];
    const Eigen::Vector2d& q = poly[(i + 1) % poly.size()];
    const Eigen::Vector2d e1 = p - c, e2 = q - c;
    const double a = 0.5 * std::abs(e1.x() * e2.y() - e1.y() * e2.x());
    area += a;
    weighted += a * (c + p + q) / 3.0;
  }
  g.volume = area;
  g.centroid = area > 0 ? Vector(weighted / area) : Vector(c);
  g.lo = Vector::Constant(2, std::numeric_limits<double>::infinity());
  g.hi = -g.lo;
  for (const auto& p : poly) {
    g.vertices.push_back(Vector(p));
    g.lo = g.lo.cwiseMin(Vector(p));
    g.hi = g.hi.cwiseMax(Vector(p));
  }
  return g;
}

// ---- n = 3: clip a polyhedron stored as a list of convex faces ----

using Face = std::vector<Eigen::Vector3d>;

inline std::vector<Face> box_faces(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
  auto corner = [&](int bx, int by, int bz) {
    return Eigen::Vector3d(bx ? hi.x() : lo.x(), by ? hi.y() : lo.y(), bz ? hi.z() : lo.z());
  };
  return {
      {corner(0, 0, 0), corner(0, 1, 0), corner(1, 1, 0), corner(1, 0, 0)},
      {corner(0, 0, 1), corner(1, 0, 1), corner(1, 1, 1), corner(0, 1, 1)},
      {corner(0, 0, 0), corner(1, 0, 0), corner(1, 0, 1), corner(0, 0, 1)},
      {corner(0, 1, 0), corner(0, 1, 1), corner(1, 1, 1), corner(1, 1, 0)},
      {corner(0, 0, 0), corner(0, 0, 1), corner(0, 1, 1), corner(0, 1, 0)},
      {corner(1, 0, 0), corner(1, 1, 0), corner(1, 1, 1), corner(1, 0, 1)},
  };
}

inline std::vector<Face> clip_polyhedron(const std::vector<Face>& faces, const Eigen::Vector3d& a,
                                         double b, double scale) {
  std::vector<Face> out;
  std::vector<Eigen::Vector3d> cut;
  for (const Face& f : faces) {
    Face nf;
    const std::size_t m = f.size();
    for (std::size_t i = 0; i < m; ++i) {
      const Eigen::Vector3d& p = f[i];
      const Eigen::Vector3d& q = f[(i + 1) % m];
      const double sp = a.dot(p) - b, sq = a.dot(q) - b;
      if (sp <= 0) nf.push_back(p);
      if (sp == 0) cut.push_back(p);
      if ((sp < 0 && sq > 0) || (sp > 0 && sq < 0)) {
        const Eigen::Vector3d x = p + (sp / (sp - sq)) * (q - p);
        nf.push_back(x);
        cut.push_back(x);
      }
    }
    if (nf.size() >= 3) out.push_back(std::move(nf));
  }
  // deduplicate cut points and order them around the plane normal
  std::vector<Eigen::Vector3d> uniq;
  for (const auto& p : cut) {
    bool seen = false;
    for (const auto& u : uniq)
      if ((u - p).norm() <= 1e-12 * scale) {
        seen = true;
        break;
      }
    if (!seen) uniq.push_back(p);
  }
  if (uniq.size() >= 3) {
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (const auto& p : uniq) c += p;
    c /= static_cast<double>(uniq.size());
    const Eigen::Vector3d n = a.normalized();
    Eigen::Vector3d e1 = (std::abs(n.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY()).cross(n).normalized();
    const Eigen::Vector3d e2 = n.cross(e1);
    std::sort(uniq.begin(), uniq.end(), [&](const Eigen::Vector3d& p, const Eigen::Vector3d& q) {
      return std::atan2((p - c).dot(e2), (p - c).dot(e1)) < std::atan2((q - c).dot(e2), (q - c).dot(e1));
    });
    out.push_back(std::move(uniq));
  }
  return out;
}

inline std::vector<Face> clip_box_3d(const std::vector<Halfspace>& hs, const Eigen::Vector3d& lo,
                                     const Eigen::Vector3d& hi) {
  const double scale = (hi - lo).norm();
  std::vector<Face> faces = box_faces(lo, hi);
  for (const auto& h : hs) {
    faces = clip_polyhedron(faces, Eigen::Vector3d(h.normal(0), h.normal(1), h.normal(2)), h.offset, scale);
    if (faces.size() < 4) return {};
  }
  return faces;
}

inline PolytopeGeometry geometry_from_faces(const std::vector<Face>& faces, double scale) {
  PolytopeGeometry g;
  std::vector<Eigen::Vector3d> verts;
  for (const auto& f : faces)
    for (const auto& p : f) {
      bool seen = false;
      for (const auto& v : verts)
        if ((v - p).norm() <= 1e-11 * scale) {
          seen = true;
          break;
        }
      if (!seen) verts.push_back(p);
    }
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& v : verts) c += v;
  c /= static_cast<double>(verts.size());
  double vol = 0.0;
  Eigen::Vector3d weighted = Eigen::Vector3d::Zero();
  for (const auto& f : faces)
    for (std::size_t i = 1; i + 1 < f.size(); ++i) {
      const double v = std::abs((f[0] - c).dot((f[i] - c).cross(f[i + 1] - c))) / 6.0;
      vol += v;
      weighted += v * (c + f[0] + f[i] + f[i + 1]) / 4.0;
    }
  g.volume = vol;
  g.centroid = vol > 0 ? Vector(weighted / vol) : Vector(c);
  g.lo = Vector::Constant(3, std::numeric_limits<double>::infinity());
  g.hi = -g.lo;
  for (const auto& v : verts) {
    g.vertices.push_back(Vector(v));
    g.lo = g.lo.cwiseMin(Vector(v));
    g.hi = g.hi.cwiseMax(Vector(v));
  }
  return g;
}

inline bool touches_frame(const PolytopeGeometry& g, double frame) {
  for (const auto& v : g.vertices)
    if (v.cwiseAbs().maxCoeff() >= frame * (1.0 - 1e-9)) return true;
  return false;
}

/// Two passes: a huge frame to detect unboundedness, then a tight frame for accuracy.
inline PolytopeGeometry clip_geometry(const std::vector<Halfspace>& hs, int n) {
  auto run = [&](const Vector& lo, const Vector& hi) -> std::optional<PolytopeGeometry> {
    if (n == 2) {
      auto poly = clip_box_2d(hs, Eigen::Vector2d(lo(0), lo(1)), Eigen::Vector2d(hi(0), hi(1)));
      if (poly.empty()) return std::nullopt;
      return geometry_from_polygon(poly);
    }
    auto faces = clip_box_3d(hs, Eigen::Vector3d(lo(0), lo(1), lo(2)), Eigen::Vector3d(hi(0), hi(1), hi(2)));
    if (faces.empty()) return std::nullopt;
    return geometry_from_faces(faces, (hi - lo).norm());
  };
  double frame = kHuge;
  for (const auto& h : hs) frame = std::max(frame, 1e4 * std::abs(h.offset));
  auto coarse = run(Vector::Constant(n, -frame), Vector::Constant(n, frame));
  if (!coarse) throw Error(ErrorKind::domain_invalid, "polytope is empty");
  if (touches_frame(*coarse, frame)) throw Error(ErrorKind::domain_invalid, "polytope is unbounded");
  const Vector span = coarse->hi - coarse->lo;
  const double pad = 0.1 * span.maxCoeff() + 1e-9;
  auto fine = run(coarse->lo.array() - pad, coarse->hi.array() + pad);
  if (!fine) throw Error(ErrorKind::domain_invalid, "polytope is empty");
  const double diam = (fine->hi - fine->lo).maxCoeff();
  if (!(fine->volume > 1e-12 * std::pow(diam, n))) throw Error(ErrorKind::domain_invalid, "polytope has empty interior");
  return *fine;
}

}  // namespace detail

struct Polytope {
  std::vector<Halfspace> halfspaces;
  std::shared_ptr<const detail::PolytopeGeometry> geometry;
};

/// Normalizes normals to unit length and computes the clipped geometry.
inline Polytope make_polytope(std::vector<Halfspace> hs) {
  if (hs.empty()) throw Error(ErrorKind::domain_invalid, "polytope needs at least one half-space");
  const auto n = hs.front().normal.size();
  if (n != 2 && n != 3)
    throw Error(ErrorKind::domain_invalid, "polytopes are supported for n = 2 and n = 3",
                json{{"n", n}});
  for (auto& h : hs) {
    if (h.normal.size() != n) throw Error(ErrorKind::domain_invalid, "mixed half-space dimensions");
    const double len = h.normal.norm();
    if (!(len > 0) || !std::isfinite(h.offset)) throw Error(ErrorKind::domain_invalid, "degenerate half-space");
    h.normal /= len;
    h.offset /= len;
  }
  Polytope p;
  p.geometry = std::make_shared<const detail::PolytopeGeometry>(detail::clip_geometry(hs, static_cast<int>(n)));
  p.halfspaces = std::move(hs);
  return p;
}

class AffineMap;

/// Bounded convex region: box, ball or half-space polytope. Immutable.
class ConvexDomain {
 public:
  using Shape = std::variant<Box, Ball, Polytope>;

  static ConvexDomain box(Vector lo, Vector hi) {
    if (lo.size() != hi.size() || lo.size() < 1) throw Error(ErrorKind::domain_invalid, "box corners differ in dimension");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo(i) < hi(i))) throw Error(ErrorKind::domain_invalid, "box needs lo < hi componentwise");
    return ConvexDomain(Box{std::move(lo), std::move(hi)});
  }

  static ConvexDomain ball(Vector center, double radius) {
    if (!(radius > 0) || !std::isfinite(radius)) throw Error(ErrorKind::domain_invalid, "ball radius must be positive");
    return ConvexDomain(Ball{std::move(center), radius});
  }

  static ConvexDomain polytope(std::vector<Halfspace> hs) { return ConvexDomain(make_polytope(std::move(hs))); }

  const Shape& shape() const noexcept { return shape_; }
  bool is_box() const noexcept { return std::holds_alternative<Box>(shape_); }
  bool is_ball() const noexcept { return std::holds_alternative<Ball>(shape_); }
  bool is_polytope() const noexcept { return std::holds_alternative<Polytope>(shape_); }

  int dim() const {
    return std::visit(
        [](const auto& s) -> int {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box>) return static_cast<int>(s.lo.size());
          else if constexpr (std::is_same_v<T, Ball>) return static_cast<int>(s.center.size());
          else return static_cast<int>(s.halfspaces.front().normal.size());
        },
        shape_);
  }

  /// Distance-like depth: positive inside, zero on the boundary, negative outside.
  /// Exact Euclidean distance to the boundary for balls; minimum facet distance otherwise.
  double depth(const Vector& x) const {
    return std::visit(
        [&](const auto& s) -> double {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box>) {
            return std::min((x - s.lo).minCoeff(), (s.hi - x).minCoeff());
          } else if constexpr (std::is_same_v<T, Ball>) {
            return s.radius - (x - s.center).norm();
          } else {
            double d = std::numeric_limits<double>::infinity();
            for (const auto& h : s.halfspaces) d = std::min(d, h.offset - h.normal.dot(x));
            return d;
          }
        },
        shape_);
  }

  bool contains(const Vector& x, double tol = 0.0) const { return depth(x) >= -tol; }

  /// Largest t >= 0 with x + t v still in the closed domain; x must be inside.
  double ray_exit(const Vector& x, const Vector& v) const {
    return std::visit(
        [&](const auto& s) -> double {
          using T = std::decay_t<decltype(s)>;
          double t = std::numeric_limits<double>::infinity();
          if constexpr (std::is_same_v<T, Box>) {
            for (Eigen::Index i = 0; i < x.size(); ++i) {
              if (v(i) > 0) t = std::min(t, (s.hi(i) - x(i)) / v(i));
              else if (v(i) < 0) t = std::min(t, (s.lo(i) - x(i)) / v(i));
            }
          } else if constexpr (std::is_same_v<T, Ball>) {
            const Vector w = x - s.center;
            const double a = v.squaredNorm(), b = w.dot(v), c = w.squaredNorm() - s.radius * s.radius;
            const double disc = std::max(0.0, b * b - a * c);
            t = (-b + std::sqrt(disc)) / a;
          } else {
            for (const auto& h : s.halfspaces) {
              const double rate = h.normal.dot(v);
              if (rate > 0) t = std::min(t, (h.offset - h.normal.dot(x)) / rate);
            }
          }
          return std::max(0.0, t);
        },
        shape_);
  }

  /// A maximizer of <dir, x> over the domain.
  Vector support_point(const Vector& dir) const {
    return std::visit(
        [&](const auto& s) -> Vector {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box>) {
            Vector p(s.lo.size());
            for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = dir(i) >= 0 ? s.hi(i) : s.lo(i);
            return p;
          } else if constexpr (std::is_same_v<T, Ball>) {
            return s.center + s.radius * dir.normalized();
          } else {
            const auto& verts = s.geometry->vertices;
            std::size_t best = 0;
            for (std::size_t i = 1; i < verts.size(); ++i)
              if (verts[i].dot(dir) > verts[best].dot(dir)) best = i;
            return verts[best];
          }
        },
        shape_);
  }

  double support_value(const Vector& dir) const { return dir.dot(support_point(dir)); }

  /// Finite point set whose convex hull is the domain (empty for balls).
  std::vector<Vector> extreme_points() const {
    if (const auto* b = std::get_if<Box>(&shape_)) {
      const int n = static_cast<int>(b->lo.size());
      std::vector<Vector> pts;
      for (long mask = 0; mask < (1L << n); ++mask) {
        Vector p(n);
        for (int i = 0; i < n; ++i) p(i) = (mask >> i) & 1 ? b->hi(i) : b->lo(i);
        pts.push_back(p);
      }
      return pts;
    }
    if (const auto* p = std::get_if<Polytope>(&shape_)) return p->geometry->vertices;
    return {};
  }

  Vector centroid() const {
    return std::visit(
        [](const auto& s) -> Vector {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box>) return 0.5 * (s.lo + s.hi);
          else if constexpr (std::is_same_v<T, Ball>) return s.center;
          else return s.geometry->centroid;
        },
        shape_);
  }

  std::pair<Vector, Vector> bounding_box() const {
    return std::visit(
        [](const auto& s) -> std::pair<Vector, Vector> {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box>) return {s.lo, s.hi};
          else if constexpr (std::is_same_v<T, Ball>)
            return {s.center.array() - s.radius, s.center.array() + s.radius};
          else return {s.geometry->lo, s.geometry->hi};
        },
        shape_);
  }

  double diameter() const {
    if (const auto* b = std::get_if<Ball>(&shape_)) return 2.0 * b->radius;
    const auto pts = extreme_points();
    double d = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = i + 1; j < pts.size(); ++j) d = std::max(d, (pts[i] - pts[j]).norm());
    return d;
  }

  inline ConvexDomain transformed(const AffineMap& map) const;

  json to_json() const {
    return std::visit(
        [](const auto& s) -> json {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, Box>) {
            return json{{"kind", "box"}, {"lo", malab::to_json(s.lo)}, {"hi", malab::to_json(s.hi)}};
          } else if constexpr (std::is_same_v<T, Ball>) {
            return json{{"kind", "ball"}, {"center", malab::to_json(s.center)}, {"radius", s.radius}};
          } else {
            json hs = json::array();
            for (const auto& h : s.halfspaces)
              hs.push_back(json{{"normal", malab::to_json(h.normal)}, {"offset", h.offset}});
            return json{{"kind", "polytope"}, {"halfspaces", hs}};
          }
        },
        shape_);
  }

  static ConvexDomain from_json(const json& j) {
    if (!j.is_object() || !j.contains("kind")) throw Error(ErrorKind::io, "domain JSON needs a 'kind' field");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "box") return box(vector_from_json(j.at("lo")), vector_from_json(j.at("hi")));
    if (kind == "ball") return ball(vector_from_json(j.at("center")), j.at("radius").get<double>());
    if (kind == "polytope") {
      std::vector<Halfspace> hs;
      for (const auto& h : j.at("halfspaces"))
        hs.push_back(Halfspace{vector_from_json(h.at("normal")), h.at("offset").get<double>()});
      return polytope(std::move(hs));
    }
    throw Error(ErrorKind::io, "unknown domain kind '" + kind + "'");
  }

 private:
  explicit ConvexDomain(Shape s) : shape_(std::move(s)) {}
  Shape shape_;
};

/// x ↦ linear·x + offset, stored together with its inverse.
class AffineMap {
 public:
  AffineMap(Matrix linear, Vector offset) : linear_(std::move(linear)), offset_(std::move(offset)) {
    if (linear_.rows() != linear_.cols() || linear_.rows() != offset_.size())
      throw Error(ErrorKind::domain_invalid, "affine map dimensions disagree");
    Eigen::FullPivLU<Matrix> lu(linear_);
    if (!lu.isInvertible() || std::abs(lu.determinant()) <= 0)
      throw Error(ErrorKind::degeneracy, "affine map is not invertible");
    inverse_ = lu.inverse();
  }

  static AffineMap identity(int n) { return AffineMap(Matrix::Identity(n, n), Vector::Zero(n)); }

  int dim() const { return static_cast<int>(offset_.size()); }
  const Matrix& linear() const noexcept { return linear_; }
  const Vector& offset() const noexcept { return offset_; }
  const Matrix& inverse_linear() const noexcept { return inverse_; }
  double determinant() const { return linear_.determinant(); }

  Vector apply(const Vector& x) const { return linear_ * x + offset_; }
  Vector apply_inverse(const Vector& y) const { return inverse_ * (y - offset_); }

  AffineMap inverse() const { return AffineMap(inverse_, -inverse_ * offset_); }

  /// (this ∘ other)(x) = this(other(x)).
  AffineMap compose(const AffineMap& other) const {
    return AffineMap(linear_ * other.linear_, linear_ * other.offset_ + offset_);
  }

  /// max |L·L⁻¹ − I|.
  double inverse_defect() const {
    return (linear_ * inverse_ - Matrix::Identity(linear_.rows(), linear_.cols())).cwiseAbs().maxCoeff();
  }

  json to_json() const {
    return json{{"linear", malab::to_json(linear_)}, {"offset", malab::to_json(offset_)},
                {"inverse_linear", malab::to_json(inverse_)}};
  }

  static AffineMap from_json(const json& j) {
    return AffineMap(matrix_from_json(j.at("linear")), vector_from_json(j.at("offset")));
  }

 private:
  Matrix linear_;
  Vector offset_;
  Matrix inverse_;
};

inline ConvexDomain ConvexDomain::transformed(const AffineMap& map) const {
  const Matrix& A = map.linear();
  const Vector& b = map.offset();
  if (const auto* bx = std::get_if<Box>(&shape_)) {
    const Matrix off = A - Matrix(A.diagonal().asDiagonal());
    if (off.cwiseAbs().maxCoeff() == 0.0) {
      const Vector p = map.apply(bx->lo), q = map.apply(bx->hi);
      return box(p.cwiseMin(q), p.cwiseMax(q));
    }
    const int n = dim();
    std::vector<Halfspace> hs;
    for (int i = 0; i < n; ++i) {
      Vector e = Vector::Zero(n);
      e(i) = 1.0;
      hs.push_back({e, bx->hi(i)});
      hs.push_back({-e, -bx->lo(i)});
    }
    return polytope(std::move(hs)).transformed(map);
  }
  if (const auto* bl = std::get_if<Ball>(&shape_)) {
    const Matrix gram = A.transpose() * A;
    const double s2 = gram.trace() / static_cast<double>(dim());
    if ((gram - s2 * Matrix::Identity(dim(), dim())).cwiseAbs().maxCoeff() > 1e-12 * s2)
      throw Error(ErrorKind::domain_invalid, "image of a ball under a non-conformal map is an ellipsoid");
    return ball(map.apply(bl->center), std::sqrt(s2) * bl->radius);
  }
  const auto& poly = std::get<Polytope>(shape_);
  const Matrix inv_t = map.inverse_linear().transpose();
  std::vector<Halfspace> hs;
  for (const auto& h : poly.halfspaces) {
    const Vector normal = inv_t * h.normal;
    hs.push_back({normal, h.offset + normal.dot(b)});
  }
  return polytope(std::move(hs));
}

/// {ξ : (ξ − c)ᵀ M (ξ − c) ≤ 1}.
struct Ellipsoid {
  Vector center;
  Matrix shape;

  double level(const Vector& x) const {
    const Vector d = x - center;
    return d.dot(shape * d);
  }

  /// Semi-axis lengths, ascending.
  Vector semi_axes() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(shape);
    Vector ax = es.eigenvalues().cwiseInverse().cwiseSqrt();
    std::sort(ax.data(), ax.data() + ax.size());
    return ax;
  }

  double axis_ratio() const {
    const Vector ax = semi_axes();
    return ax(ax.size() - 1) / ax(0);
  }

  json to_json() const { return json{{"center", malab::to_json(center)}, {"shape", malab::to_json(shape)}}; }

  static Ellipsoid from_json(const json& j) {
    return Ellipsoid{vector_from_json(j.at("center")), matrix_from_json(j.at("shape"))};
  }
};

inline constexpr double kMaxAxisRatio = 1e6;

/// Minimum-volume ellipsoid centered at the domain's centroid that contains the domain.
///
/// Fixed-center Khachiyan ascent with Todd–Yildirim away steps on the D-optimal design
/// dual: weights w over the extreme points q_i, X = Σ w_i q_i q_iᵀ, and the stopping gap
/// max_i q_iᵀX⁻¹q_i / n − 1 ≤ tol bounds the volume excess by (1 + tol)^{n/2}.
inline Ellipsoid centered_mvee(const ConvexDomain& domain, double tol = 1e-7, int max_iters = 200000) {
  if (!(tol > 0) || tol > 1e-3) throw Error(ErrorKind::precondition, "mvee tolerance must lie in (0, 1e-3]");
  const int n = domain.dim();
  const Vector c = domain.centroid();
  if (const auto* b = std::get_if<Ball>(&domain.shape()))
    return Ellipsoid{c, Matrix::Identity(n, n) / (b->radius * b->radius)};

  const auto pts = domain.extreme_points();
  const auto m = static_cast<Eigen::Index>(pts.size());
  Matrix Q(n, m);
  for (Eigen::Index i = 0; i < m; ++i) Q.col(i) = pts[static_cast<std::size_t>(i)] - c;

  Vector w = Vector::Constant(m, 1.0 / static_cast<double>(m));
  Vector kappa(m);
  double gap = std::numeric_limits<double>::infinity();
  Matrix Xinv;
  for (int it = 0; it <= max_iters; ++it) {
    const Matrix X = Q * w.asDiagonal() * Q.transpose();
    Eigen::LDLT<Matrix> ldlt(X);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0)
      throw Error(ErrorKind::domain_invalid, "domain has empty interior (singular design)");
    Xinv = ldlt.solve(Matrix::Identity(n, n));
    kappa = (Q.transpose() * Xinv * Q).diagonal();
    Eigen::Index jp = 0;
    const double kmax = kappa.maxCoeff(&jp);
    gap = kmax / n - 1.0;
    if (gap <= tol) break;
    if (it == max_iters)
      throw Error(ErrorKind::convergence, "mvee iteration cap reached", json{{"duality_gap", gap}});
    Eigen::Index jm = -1;
    double kmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i)
      if (w(i) > 0 && kappa(i) < kmin) {
        kmin = kappa(i);
        jm = i;
      }
    if (kmax - n >= n - kmin || jm < 0) {
      const double step = (kmax - n) / (n * (kmax - 1.0));
      w *= (1.0 - step);
      w(jp) += step;
    } else {
      const double wj = w(jm);
      // for kmin <= 1 the objective increases all the way to dropping the point
      const double drop = wj / (1.0 - wj);
      const double step = kmin > 1.0 ? std::min((n - kmin) / (n * (kmin - 1.0)), drop) : drop;
      w *= (1.0 + step);
      w(jm) -= step;
      if (step == drop || w(jm) < 1e-300) w(jm) = 0.0;
    }
  }
  Ellipsoid e{c, Xinv / kappa.maxCoeff()};
  e.shape = symmetrize(e.shape);
  if (e.axis_ratio() > kMaxAxisRatio)
    throw Error(ErrorKind::domain_invalid, "domain is too flat to normalize",
                json{{"axis_ratio", e.axis_ratio()}});
  return e;
}

struct NormalizedDomain {
  AffineMap map;            // sends the centered MVEE to B(0, 1)
  ConvexDomain normalized;  // map(domain)
  Ellipsoid ellipsoid;
  double inner_radius = 0.0;  // measured min support value of the image
  double outer_radius = 0.0;  // measured max norm of image support points
};

inline double sandwich_inner_bound(int n) { return std::pow(static_cast<double>(n), -1.5); }

/// Affine map T with T(E) = B(0,1) for the centered MVEE E, plus a sampled check of
/// B(0, n^{-3/2}) ⊂ T(Ω) ⊂ B(0, 1).
inline NormalizedDomain normalize_domain(const ConvexDomain& domain, double tol = 1e-7) {
  const int n = domain.dim();
  Ellipsoid e = centered_mvee(domain, tol);
  Eigen::SelfAdjointEigenSolver<Matrix> es(e.shape);
  const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  Matrix L = symmetrize(root);
  // keep the map exactly diagonal when the ellipsoid is axis-aligned
  const Matrix off = e.shape - Matrix(e.shape.diagonal().asDiagonal());
  if (off.cwiseAbs().maxCoeff() == 0.0) L = e.shape.diagonal().cwiseSqrt().asDiagonal();
  AffineMap map(L, -L * e.center);
  ConvexDomain image = domain.transformed(map);

  const int samples = n == 2 ? 1024 : (n == 3 ? 2048 : 1024);
  double inner = std::numeric_limits<double>::infinity(), outer = 0.0;
  for (const auto& d : sphere_directions(n, samples)) {
    const Vector p = image.support_point(d);
    inner = std::min(inner, d.dot(p));
    outer = std::max(outer, p.norm());
  }
  for (const auto& p : image.extreme_points()) outer = std::max(outer, p.norm());
  if (const auto* poly = std::get_if<Polytope>(&image.shape()))
    for (const auto& h : poly->halfspaces) inner = std::min(inner, h.offset);

  const double rin = sandwich_inner_bound(n);
  if (outer > 1.0 + 1e-6 || inner < rin * (1.0 - 1e-6))
    throw Error(ErrorKind::normalization, "normalized domain violates the ellipsoid sandwich",
                json{{"inner", inner}, {"outer", outer}, {"required_inner", rin}});
  return NormalizedDomain{map, image, e, inner, outer};
}

}  // namespace malab
