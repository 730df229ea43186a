#pragma once

// CSR matrices, a diagonal mass type, Jacobi-preconditioned CG and a block
// Krylov eigensolver for L x = lambda M x with diagonal M.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pclap/dense.hpp"

namespace pclap {

struct Triplet {
  std::size_t row, col;
  double value;
};

class SparseMatrix {
 public:
  SparseMatrix() = default;
  explicit SparseMatrix(std::size_t n) : rows_(n), cols_(n), row_ptr_(n + 1, 0) {}
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr, std::vector<std::size_t> col,
               std::vector<double> val);

  // Duplicates are summed; entries are sorted by column within each row.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets);
  static SparseMatrix identity(std::size_t n);
  static SparseMatrix from_dense(const Matrix& dense, double drop_below = 0.0);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return val_.size(); }
  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col() const { return col_; }
  const std::vector<double>& values() const { return val_; }
  std::vector<double>& values() { return val_; }

  double coeff(std::size_t i, std::size_t j) const;
  std::vector<double> diagonal() const;
  std::vector<double> row_sums() const;
  // max_i sum_j |a_ij|
  double norm_inf() const;
  double max_asymmetry() const;
  double mean_nonzeros_per_row() const;

  SparseMatrix transpose() const;
  Matrix to_dense() const;

  std::vector<double> multiply(std::span<const double> x) const;
  void multiply(std::span<const double> x, std::span<double> y) const;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_;
  std::vector<double> val_;
};

std::vector<double> spmv(const SparseMatrix& A, std::span<const double> x);

// Positive diagonal of a lumped mass matrix.
class MassVector {
 public:
  MassVector() = default;
  explicit MassVector(std::vector<double> values);
  static MassVector ones(std::size_t n) { return MassVector(std::vector<double>(n, 1.0)); }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  double mean() const;
  // Scaled copy with mean exactly representable as 1 up to rounding.
  MassVector normalized() const;

 private:
  std::vector<double> values_;
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double residual)
      : std::runtime_error(what + " (relative residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

struct CgOptions {
  double tol = 1e-10;
  std::size_t max_iter = 0;  // 0 selects 10 n
  // For PSD systems whose kernel is the constant vector: project b and the
  // iterates onto the mean-zero subspace.
  bool deflate_constant = false;
};

struct CgResult {
  std::vector<double> x;
  std::size_t iterations = 0;
  double relative_residual = 0.0;
};

CgResult cg_solve(const SparseMatrix& A, std::span<const double> b, const CgOptions& options = {},
                  std::span<const double> x0 = {});

struct EigenPairs {
  std::vector<double> values;                // ascending
  std::vector<std::vector<double>> vectors;  // M-orthonormal
  double lambda_max_estimate = 0.0;

  std::size_t size() const { return values.size(); }
  // |lambda| < 1e-8 lambda_max counts as a zero eigenvalue.
  bool is_zero(std::size_t i) const { return std::abs(values[i]) < 1e-8 * lambda_max_estimate; }
};

struct EigenOptions {
  std::uint64_t seed = 0;
  double tol = 1e-10;
  std::size_t block_size = 8;
};

// The `count` smallest eigenpairs of L x = lambda M x. L must be symmetric PSD
// with zero row sums; the constant mode is always returned first with
// eigenvalue 0.
EigenPairs eig_smallest(const SparseMatrix& L, const MassVector& M, std::size_t count, const EigenOptions& options = {});

// Dense symmetric eigendecomposition (Householder tridiagonalization + implicit
// QL). Returns ascending eigenvalues; column j of `vectors` is the j-th
// eigenvector.
struct DenseEigen {
  std::vector<double> values;
  Matrix vectors;
};
DenseEigen symmetric_eigen(const Matrix& A);

// Largest eigenvalue of M^{-1} L by power iteration.
double estimate_lambda_max(const SparseMatrix& L, const MassVector& M, std::size_t iterations = 100,
                           std::uint64_t seed = 1);

// MatrixMarket coordinate real general format.
void save_matrix_market(const SparseMatrix& A, const std::filesystem::path& path);
SparseMatrix load_matrix_market(const std::filesystem::path& path);

void save_vector(std::span<const double> v, const std::filesystem::path& path);
std::vector<double> load_vector(const std::filesystem::path& path);

}  // namespace pclap
