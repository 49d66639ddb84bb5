#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ifval {

using Vec = std::vector<double>;

struct NotPositiveDefinite : std::runtime_error {
  NotPositiveDefinite(std::size_t pivot_index, double pivot_value)
      : std::runtime_error("matrix not positive definite at pivot " +
                           std::to_string(pivot_index) +
                           " (value " + std::to_string(pivot_value) + ")"),
        pivot(pivot_index) {}
  std::size_t pivot;
};

struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec values;  // row-major

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }
};

Vec matvec(const DenseMatrix& m, const Vec& v);

// Cholesky factor of (a + jitter*I), reusable across right-hand sides.
// Throws NotPositiveDefinite with the failing pivot index on breakdown.
class Cholesky {
 public:
  explicit Cholesky(const DenseMatrix& a, double jitter = 0.0);
  Vec solve(const Vec& b) const;
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  Vec l_;  // lower triangle, row-major
};

// Solves (a + jitter*I) x = b via Cholesky.
Vec solve_spd(const DenseMatrix& a, const Vec& b, double jitter = 0.0);

// Largest eigenvalue and a unit eigenvector of a symmetric matrix
// (cyclic Jacobi). Test oracle; rows must be <= 2000.
std::pair<double, Vec> dense_eigh_max(const DenseMatrix& a);

// Small vector helpers shared across modules.
double dot(const Vec& a, const Vec& b);
double norm2(const Vec& a);
void axpy(double alpha, const Vec& x, Vec& y);  // y += alpha*x
void scal(double alpha, Vec& x);

}  // namespace ifval
