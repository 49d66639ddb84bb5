#include "ifval/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace ifval {

Vec matvec(const DenseMatrix& m, const Vec& v) {
  if (v.size() != m.cols) {
    throw std::invalid_argument("matvec: matrix is " + std::to_string(m.rows) +
                                "x" + std::to_string(m.cols) + " but vector has " +
                                std::to_string(v.size()) + " entries");
  }
  Vec out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    const double* row = &m.values[i * m.cols];
    for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * v[j];
    out[i] = acc;
  }
  return out;
}

Cholesky::Cholesky(const DenseMatrix& a, double jitter) : n_(a.rows) {
  if (a.rows != a.cols) throw std::invalid_argument("Cholesky: matrix not square");
  const std::size_t n = n_;
  l_.assign(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a.at(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= l_[j * n + k] * l_[j * n + k];
    if (!(d > 0.0) || !std::isfinite(d)) throw NotPositiveDefinite(j, d);
    const double ljj = std::sqrt(d);
    l_[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l_[i * n + k] * l_[j * n + k];
      l_[i * n + j] = s / ljj;
    }
  }
}

Vec Cholesky::solve(const Vec& b) const {
  if (b.size() != n_) {
    throw std::invalid_argument("Cholesky::solve: rhs length " +
                                std::to_string(b.size()) + " != " +
                                std::to_string(n_));
  }
  const std::size_t n = n_;
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l_[i * n + k] * y[k];
    y[i] = s / l_[i * n + i];
  }
  Vec x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l_[k * n + ii] * x[k];
    x[ii] = s / l_[ii * n + ii];
  }
  return x;
}

Vec solve_spd(const DenseMatrix& a, const Vec& b, double jitter) {
  return Cholesky(a, jitter).solve(b);
}

std::pair<double, Vec> dense_eigh_max(const DenseMatrix& a) {
  if (a.rows != a.cols) throw std::invalid_argument("dense_eigh_max: not square");
  if (a.rows > 2000) throw std::invalid_argument("dense_eigh_max: dimension > 2000");
  const std::size_t n = a.rows;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(a.at(i, j)));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a.at(i, j) - a.at(j, i)) > 1e-10 * std::max(1.0, scale)) {
        throw std::invalid_argument("dense_eigh_max: matrix not symmetric");
      }
    }
  }

  DenseMatrix w = a;                       // working copy, diagonalized in place
  DenseMatrix v = DenseMatrix::identity(n);  // accumulated rotations
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += w.at(p, q) * w.at(p, q);
    if (off <= 1e-26 * std::max(1.0, scale * scale)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = w.at(p, q);
        if (apq == 0.0) continue;
        const double app = w.at(p, p), aqq = w.at(q, q);
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double wkp = w.at(k, p), wkq = w.at(k, q);
          w.at(k, p) = c * wkp - s * wkq;
          w.at(k, q) = s * wkp + c * wkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double wpk = w.at(p, k), wqk = w.at(q, k);
          w.at(p, k) = c * wpk - s * wqk;
          w.at(q, k) = s * wpk + c * wqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p), vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (w.at(i, i) > w.at(best, best)) best = i;
  Vec evec(n);
  for (std::size_t k = 0; k < n; ++k) evec[k] = v.at(k, best);
  const double nrm = norm2(evec);
  if (nrm > 0) scal(1.0 / nrm, evec);
  return {w.at(best, best), evec};
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, const Vec& x, Vec& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scal(double alpha, Vec& x) {
  for (auto& xi : x) xi *= alpha;
}

}  // namespace ifval
