#pragma once

/**
 * @file core.hpp
 * @brief Shared numeric types, the third-order tensor, error type and small helpers.
 */

#include <Eigen/Dense>

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace malab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using json = nlohmann::json;

/// Which Legendre side a potential lives on: f(x) (primal) or u(xi) (dual).
enum class Side { primal, dual };

inline const char* to_string(Side s) { return s == Side::primal ? "primal" : "dual"; }

inline Side side_from_string(const std::string& s);

enum class ErrorKind {
  domain_invalid,
  convergence,
  domain,
  stencil,
  degeneracy,
  extrapolation,
  convexity,
  convexity_breakdown,
  non_convergence,
  precondition,
  counterexample,
  window,
  unbounded_section,
  normalization,
  io,
  usage,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::domain_invalid: return "domain_invalid";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::domain: return "domain";
    case ErrorKind::stencil: return "stencil";
    case ErrorKind::degeneracy: return "degeneracy";
    case ErrorKind::extrapolation: return "extrapolation";
    case ErrorKind::convexity: return "convexity";
    case ErrorKind::convexity_breakdown: return "convexity_breakdown";
    case ErrorKind::non_convergence: return "non_convergence";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::counterexample: return "counterexample";
    case ErrorKind::window: return "window";
    case ErrorKind::unbounded_section: return "unbounded_section";
    case ErrorKind::normalization: return "normalization";
    case ErrorKind::io: return "io";
    case ErrorKind::usage: return "usage";
  }
  return "unknown";
}

/// Every failure in the library is reported through this type; `details` carries
/// machine-readable context (offending node, duality gap, residual history, ...).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, json details = json::object())
      : std::runtime_error(message), kind_(kind), details_(std::move(details)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const json& details() const noexcept { return details_; }

  json to_json() const {
    return json{{"error", to_string(kind_)}, {"message", what()}, {"details", details_}};
  }

 private:
  ErrorKind kind_;
  json details_;
};

inline Side side_from_string(const std::string& s) {
  if (s == "primal") return Side::primal;
  if (s == "dual") return Side::dual;
  throw Error(ErrorKind::usage, "side must be 'primal' or 'dual', got '" + s + "'");
}

/// Fully general n x n x n array; derivative tensors are kept symmetric by construction.
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(int n) : n_(n), data_(static_cast<std::size_t>(n * n * n), 0.0) {}

  int dim() const noexcept { return n_; }

  double& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  double operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }

  /// Sets all six permutations of (i,j,k) at once.
  void set_sym(int i, int j, int k, double v) {
    (*this)(i, j, k) = v;
    (*this)(i, k, j) = v;
    (*this)(j, i, k) = v;
    (*this)(j, k, i) = v;
    (*this)(k, i, j) = v;
    (*this)(k, j, i) = v;
  }

  Tensor3 symmetrized() const {
    Tensor3 out(n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        for (int k = 0; k < n_; ++k)
          out(i, j, k) = ((*this)(i, j, k) + (*this)(i, k, j) + (*this)(j, i, k) +
                          (*this)(j, k, i) + (*this)(k, i, j) + (*this)(k, j, i)) /
                         6.0;
    return out;
  }

  /// max |T_ijk - T_sigma(ijk)| over all permutations.
  double asymmetry() const {
    double worst = 0.0;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        for (int k = 0; k < n_; ++k) {
          const double v = (*this)(i, j, k);
          worst = std::max({worst, std::abs(v - (*this)(i, k, j)), std::abs(v - (*this)(j, i, k)),
                            std::abs(v - (*this)(k, j, i))});
        }
    return worst;
  }

  /// Slice T(i, ., .) as a matrix.
  Matrix slice(int i) const {
    Matrix m(n_, n_);
    for (int j = 0; j < n_; ++j)
      for (int k = 0; k < n_; ++k) m(j, k) = (*this)(i, j, k);
    return m;
  }

  /// T'(a,b,c) = sum L(i,a) L(j,b) L(k,c) T(i,j,k)  (pull back by the linear map L).
  Tensor3 pulled_back(const Matrix& L) const {
    const int n = static_cast<int>(L.cols());
    Tensor3 out(n);
    // contract one index at a time: O(n^4)
    std::vector<double> t1(static_cast<std::size_t>(n_ * n_ * n), 0.0);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        for (int c = 0; c < n; ++c) {
          double s = 0.0;
          for (int k = 0; k < n_; ++k) s += (*this)(i, j, k) * L(k, c);
          t1[static_cast<std::size_t>((i * n_ + j) * n + c)] = s;
        }
    std::vector<double> t2(static_cast<std::size_t>(n_ * n * n), 0.0);
    for (int i = 0; i < n_; ++i)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c) {
          double s = 0.0;
          for (int j = 0; j < n_; ++j) s += t1[static_cast<std::size_t>((i * n_ + j) * n + c)] * L(j, b);
          t2[static_cast<std::size_t>((i * n + b) * n + c)] = s;
        }
    for (int a2 = 0; a2 < n; ++a2)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c) {
          double s = 0.0;
          for (int i = 0; i < n_; ++i) s += t2[static_cast<std::size_t>((i * n + b) * n + c)] * L(i, a2);
          out(a2, b, c) = s;
        }
    return out;
  }

  Tensor3& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  const std::vector<double>& raw() const noexcept { return data_; }

 private:
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>((i * n_ + j) * n_ + k);
  }

  int n_ = 0;
  std::vector<double> data_;
};

/// Value and derivatives of a potential at one point.
struct Jet {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
  Tensor3 third;
};

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

/// Row-major nested array.
inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::io, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorKind::io, "expected a non-empty matrix array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& r = j[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(r.size()) != cols) throw Error(ErrorKind::io, "ragged matrix array");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = r[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

/// Shortest round-trip decimal form (17 significant digits).
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Runs body(i) for i in [0, count). Work is split into contiguous blocks so each index
/// is handled by exactly one thread; callers write results into per-index slots.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> failures(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t begin = count * w / workers;
      const std::size_t end = count * (w + 1) / workers;
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
}

/// Unit vectors spread over the sphere S^{n-1}: equal angles for n = 2, a Fibonacci
/// lattice for n = 3, and signed coordinate/diagonal directions otherwise.
inline std::vector<Vector> sphere_directions(int n, int count) {
  std::vector<Vector> dirs;
  if (n == 2) {
    for (int i = 0; i < count; ++i) {
      const double t = 2.0 * M_PI * (i + 0.5) / count;
      Vector v(2);
      v << std::cos(t), std::sin(t);
      dirs.push_back(v);
    }
  } else if (n == 3) {
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
      const double z = 1.0 - 2.0 * (i + 0.5) / count;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * i;
      Vector v(3);
      v << r * std::cos(phi), r * std::sin(phi), z;
      dirs.push_back(v);
    }
  } else {
    // Halton points pushed through the logit map, then projected to the sphere
    auto radical_inverse = [](int index, int base) {
      double f = 1.0, r = 0.0;
      while (index > 0) {
        f /= base;
        r += f * (index % base);
        index /= base;
      }
      return r;
    };
    static const int primes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
    for (int i = 0; i < count; ++i) {
      Vector v(n);
      for (int a = 0; a < n; ++a) {
        const double p = radical_inverse(i + 1, primes[a % 16]);
        v(a) = std::log(p / (1.0 - p + 1e-300) + 1e-300);
      }
      const double norm = v.norm();
      if (norm > 1e-12) dirs.push_back(v / norm);
    }
    for (int a = 0; a < n; ++a) {
      Vector e = Vector::Zero(n);
      e(a) = 1.0;
      dirs.push_back(e);
      dirs.push_back(-e);
    }
  }
  return dirs;
}

}  // namespace malab
