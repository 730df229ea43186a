#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/SparseCholesky>

#include "pclap/kernels.hpp"
#include "pclap/random.hpp"
#include "pclap/sparse.hpp"

namespace pclap {
namespace {

// Householder reduction of the symmetric matrix held in V (row-major n x n)
// to tridiagonal form, accumulating the transform in V.
void tridiagonalize(std::size_t n, std::vector<double>& V, std::vector<double>& d, std::vector<double>& e) {
  auto at = [&](std::size_t i, std::size_t j) -> double& { return V[i * n + j]; };
  for (std::size_t j = 0; j < n; ++j) d[j] = at(n - 1, j);
  for (std::size_t i = n - 1; i > 0; --i) {
    double scale = 0.0, h = 0.0;
    for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (std::size_t j = 0; j < i; ++j) {
        d[j] = at(i - 1, j);
        at(i, j) = 0.0;
        at(j, i) = 0.0;
      }
    } else {
      for (std::size_t k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        at(j, i) = f;
        g = e[j] + at(j, j) * f;
        for (std::size_t k = j + 1; k < i; ++k) {
          g += at(k, j) * d[k];
          e[k] += at(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (std::size_t k = j; k < i; ++k) at(k, j) -= (f * e[k] + g * d[k]);
        d[j] = at(i - 1, j);
        at(i, j) = 0.0;
      }
    }
    d[i] = h;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    at(n - 1, i) = at(i, i);
    at(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (std::size_t k = 0; k <= i; ++k) d[k] = at(k, i + 1) / h;
      for (std::size_t j = 0; j <= i; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k <= i; ++k) g += at(k, i + 1) * at(k, j);
        for (std::size_t k = 0; k <= i; ++k) at(k, j) -= g * d[k];
      }
    }
    for (std::size_t k = 0; k <= i; ++k) at(k, i + 1) = 0.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = at(n - 1, j);
    at(n - 1, j) = 0.0;
  }
  at(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

// Implicit QL on the tridiagonal (d, e), rotating the columns of V.
void tridiagonal_ql(std::size_t n, std::vector<double>& V, std::vector<double>& d, std::vector<double>& e) {
  auto at = [&](std::size_t i, std::size_t j) -> double& { return V[i * n + j]; };
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  double f = 0.0, tst1 = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m == n) m = n - 1;
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > 200) throw SolverError("symmetric_eigen: QL iteration did not converge", std::abs(e[l]));
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;
        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (std::size_t ii = m; ii-- > l;) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[ii];
          h = c * p;
          r = std::hypot(p, e[ii]);
          e[ii + 1] = s * r;
          s = e[ii] / r;
          c = p / r;
          p = c * d[ii] - s * g;
          d[ii + 1] = h + s * (c * g + s * d[ii]);
          for (std::size_t k = 0; k < n; ++k) {
            double* row = &V[k * n];
            h = row[ii + 1];
            row[ii + 1] = s * row[ii] + c * h;
            row[ii] = c * row[ii] - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
  (void)at;
}

}  // namespace

DenseEigen symmetric_eigen(const Matrix& A) {
  if (A.rows != A.cols) throw std::invalid_argument("symmetric_eigen: matrix is not square");
  const std::size_t n = A.rows;
  DenseEigen out;
  if (n == 0) return out;
  std::vector<double> V(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) V[i * n + j] = 0.5 * (A(i, j) + A(j, i));
  std::vector<double> d(n), e(n);
  tridiagonalize(n, V, d, e);
  tridiagonal_ql(n, V, d, e);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    out.values[c] = d[order[c]];
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = V[r * n + order[c]];
  }
  return out;
}

double estimate_lambda_max(const SparseMatrix& L, const MassVector& M, std::size_t iterations, std::uint64_t seed) {
  const std::size_t n = L.rows();
  if (M.size() != n) throw std::invalid_argument("estimate_lambda_max: dimension mismatch");
  if (n == 0) return 0.0;
  // Power iteration on the symmetric M^{-1/2} L M^{-1/2}.
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = 1.0 / std::sqrt(M[i]);
  Rng rng(seed);
  std::vector<double> y(n), t(n), Ay(n);
  for (double& v : y) v = rng.normal();
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    const double nrm = std::sqrt(kernels::dot(y, y));
    if (nrm == 0.0) return 0.0;
    for (double& v : y) v /= nrm;
    for (std::size_t i = 0; i < n; ++i) t[i] = s[i] * y[i];
    L.multiply(t, Ay);
    for (std::size_t i = 0; i < n; ++i) Ay[i] *= s[i];
    lambda = kernels::dot(y, Ay);
    y.swap(Ay);
  }
  return lambda;
}

EigenPairs eig_smallest(const SparseMatrix& L, const MassVector& M, std::size_t count, const EigenOptions& options) {
  const std::size_t n = L.rows();
  if (L.cols() != n || M.size() != n) throw std::invalid_argument("eig_smallest: dimension mismatch");
  if (count == 0) return {};
  if (count >= n) throw std::invalid_argument("eig_smallest: count must be smaller than the dimension");

  // Work with A = M^{-1/2} L M^{-1/2}; the constant mode y0 = M^{1/2} 1 is an
  // exact null vector and is deflated from the Krylov space.
  std::vector<double> sqrt_m(n), inv_sqrt_m(n);
  for (std::size_t i = 0; i < n; ++i) {
    sqrt_m[i] = std::sqrt(M[i]);
    inv_sqrt_m[i] = 1.0 / sqrt_m[i];
  }
  std::vector<double> y0 = sqrt_m;
  {
    const double nrm = std::sqrt(kernels::dot(y0, y0));
    for (double& v : y0) v /= nrm;
  }
  std::vector<double> scratch(n);
  auto apply_A = [&](std::span<const double> y, std::span<double> out) {
    for (std::size_t i = 0; i < n; ++i) scratch[i] = inv_sqrt_m[i] * y[i];
    L.multiply(scratch, out);
    for (std::size_t i = 0; i < n; ++i) out[i] *= inv_sqrt_m[i];
  };

  const double lambda_max = std::max(estimate_lambda_max(L, M, 30, options.seed + 7), 1e-300);

  // The space is grown with the shift-inverted S = M^{1/2} (L + sigma M)^{-1}
  // M^{1/2}, whose dominant modes are the smallest of A; Rayleigh-Ritz uses A.
  const double sigma = 1e-4 * lambda_max;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor;
  {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(L.nnz() + n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t q = L.row_ptr()[i]; q < L.row_ptr()[i + 1]; ++q)
        trip.emplace_back(static_cast<int>(i), static_cast<int>(L.col()[q]), L.values()[q]);
      trip.emplace_back(static_cast<int>(i), static_cast<int>(i), sigma * M[i]);
    }
    Eigen::SparseMatrix<double> K(static_cast<int>(n), static_cast<int>(n));
    K.setFromTriplets(trip.begin(), trip.end());
    factor.compute(K);
    if (factor.info() != Eigen::Success) throw SolverError("eig_smallest: shifted factorization failed", 1.0);
  }
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  auto apply_S = [&](std::span<const double> y, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) rhs[static_cast<Eigen::Index>(i)] = sqrt_m[i] * y[i];
    const Eigen::VectorXd x = factor.solve(rhs);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = sqrt_m[i] * x[static_cast<Eigen::Index>(i)];
  };

  const std::size_t wanted = count - 1;  // beyond the constant mode
  const std::size_t max_dim = n - 1;
  const std::size_t block = std::max<std::size_t>(1, std::min(options.block_size, max_dim));
  Rng rng(mix_seed(options.seed, 0xE16));

  std::vector<std::vector<double>> Q, W;  // basis and A * basis
  std::vector<std::vector<double>> T;     // T[i][j] = Q_i . W_j, grown incrementally

  // Orthogonalizes v against y0 and Q (two passes); returns the final norm.
  auto orthogonalize = [&](std::vector<double>& v) {
    for (int pass = 0; pass < 2; ++pass) {
      kernels::axpy(-kernels::dot(y0, v), y0, v);
      for (const auto& q : Q) kernels::axpy(-kernels::dot(q, v), q, v);
    }
    return std::sqrt(kernels::dot(v, v));
  };
  auto add_vector = [&](std::vector<double> v) {
    std::vector<double> w(n);
    apply_A(v, w);
    Q.push_back(std::move(v));
    W.push_back(std::move(w));
    const std::size_t m = Q.size();
    for (auto& row : T) row.push_back(0.0);
    T.emplace_back(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double t = kernels::dot(Q[i], W[m - 1]);
      T[i][m - 1] = t;
      T[m - 1][i] = t;
    }
  };
  auto random_vector = [&] {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
  };
  // Appends v (already orthogonalized) or a fresh random direction when v has
  // collapsed into the current span.
  auto push_direction = [&](std::vector<double> v, double source_norm) {
    double nrm = orthogonalize(v);
    int attempts = 0;
    while (!(nrm > 1e-10 * std::max(source_norm, 1e-300)) && attempts < 8) {
      v = random_vector();
      source_norm = std::sqrt(kernels::dot(v, v));
      nrm = orthogonalize(v);
      ++attempts;
    }
    if (!(nrm > 0.0)) return false;
    for (double& x : v) x /= nrm;
    add_vector(std::move(v));
    return true;
  };

  for (std::size_t b = 0; b < block && Q.size() < max_dim; ++b) {
    auto v = random_vector();
    const double nrm = std::sqrt(kernels::dot(v, v));
    push_direction(std::move(v), nrm);
  }

  std::size_t next_check = std::min(max_dim, wanted + 2 * block);
  std::size_t block_begin = 0;

  for (;;) {
    const std::size_t m = Q.size();
    if (m >= next_check || m >= max_dim) {
      Matrix Tm(m, m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) Tm(i, j) = 0.5 * (T[i][j] + T[j][i]);
      const DenseEigen ritz = symmetric_eigen(Tm);
      const std::size_t take = std::min(wanted, m);
      bool converged = take == wanted;
      EigenPairs result;
      result.values.push_back(0.0);
      {
        std::vector<double> v0(n);
        for (std::size_t i = 0; i < n; ++i) v0[i] = y0[i] * inv_sqrt_m[i];
        result.vectors.push_back(std::move(v0));
      }
      for (std::size_t c = 0; c < take && converged; ++c) {
        std::vector<double> y(n, 0.0), Ay(n, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
          const double s = ritz.vectors(j, c);
          kernels::axpy(s, Q[j], y);
          kernels::axpy(s, W[j], Ay);
        }
        const double theta = ritz.values[c];
        double res2 = 0.0, lv2 = 0.0, mv2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double r = sqrt_m[i] * (Ay[i] - theta * y[i]);
          res2 += r * r;
          lv2 += sqrt_m[i] * sqrt_m[i] * Ay[i] * Ay[i];
          mv2 += sqrt_m[i] * sqrt_m[i] * y[i] * y[i];
        }
        const double bound = options.tol * std::max(std::sqrt(lv2), 1e-10 * lambda_max * std::sqrt(mv2));
        if (m < max_dim && std::sqrt(res2) > bound) {
          converged = false;
          break;
        }
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = y[i] * inv_sqrt_m[i];
        result.values.push_back(theta);
        result.vectors.push_back(std::move(v));
      }
      if (converged || m >= max_dim) {
        // M-normalize and fix signs: largest-magnitude entry positive.
        for (auto& v : result.vectors) {
          double mn = 0.0;
          for (std::size_t i = 0; i < n; ++i) mn += M[i] * v[i] * v[i];
          mn = std::sqrt(mn);
          std::size_t arg = 0;
          for (std::size_t i = 0; i < n; ++i) {
            v[i] /= mn;
            if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
          }
          if (v[arg] < 0)
            for (double& x : v) x = -x;
        }
        result.lambda_max_estimate = lambda_max;
        if (result.values.size() < count)
          throw SolverError("eig_smallest: Krylov space exhausted before all pairs converged", 1.0);
        return result;
      }
      next_check = std::min(max_dim, m + 2 * block);
    }
    // Expand with A applied to the most recent block.
    const std::size_t block_end = Q.size();
    bool grew = false;
    for (std::size_t j = block_begin; j < block_end && Q.size() < max_dim; ++j) {
      std::vector<double> v;
      apply_S(Q[j], v);
      const double src = std::sqrt(kernels::dot(v, v));
      grew |= push_direction(std::move(v), src);
    }
    block_begin = block_end;
    if (!grew && Q.size() < max_dim) {
      auto v = random_vector();
      const double nrm = std::sqrt(kernels::dot(v, v));
      if (!push_direction(std::move(v), nrm)) next_check = Q.size();
    }
  }
}

}  // namespace pclap
