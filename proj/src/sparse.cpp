#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pclap/kernels.hpp"
#include "pclap/sparse.hpp"

namespace pclap {

SparseMatrix::SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
                           std::vector<std::size_t> col, std::vector<double> val)
    : rows_(rows), cols_(cols), row_ptr_(std::move(row_ptr)), col_(std::move(col)), val_(std::move(val)) {
  if (row_ptr_.size() != rows_ + 1 || col_.size() != val_.size() || row_ptr_.back() != col_.size())
    throw std::invalid_argument("SparseMatrix: inconsistent CSR arrays");
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q) {
      if (col_[q] >= cols_) throw std::out_of_range("SparseMatrix: column index out of range");
      if (q > row_ptr_[i] && col_[q] <= col_[q - 1])
        throw std::invalid_argument("SparseMatrix: columns must be strictly increasing per row");
    }
}

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
  for (const auto& t : triplets)
    if (t.row >= rows || t.col >= cols) throw std::out_of_range("from_triplets: index out of range");
  std::sort(triplets.begin(), triplets.end(),
            [](const Triplet& a, const Triplet& b) { return a.row != b.row ? a.row < b.row : a.col < b.col; });
  std::vector<std::size_t> row_ptr(rows + 1, 0);
  std::vector<std::size_t> col;
  std::vector<double> val;
  for (std::size_t q = 0; q < triplets.size();) {
    const std::size_t r = triplets[q].row, c = triplets[q].col;
    double sum = 0.0;
    while (q < triplets.size() && triplets[q].row == r && triplets[q].col == c) sum += triplets[q++].value;
    col.push_back(c);
    val.push_back(sum);
    row_ptr[r + 1] += 1;
  }
  for (std::size_t i = 0; i < rows; ++i) row_ptr[i + 1] += row_ptr[i];
  return SparseMatrix(rows, cols, std::move(row_ptr), std::move(col), std::move(val));
}

SparseMatrix SparseMatrix::identity(std::size_t n) {
  std::vector<std::size_t> row_ptr(n + 1), col(n);
  std::iota(row_ptr.begin(), row_ptr.end(), 0);
  std::iota(col.begin(), col.end(), 0);
  return SparseMatrix(n, n, std::move(row_ptr), std::move(col), std::vector<double>(n, 1.0));
}

SparseMatrix SparseMatrix::from_dense(const Matrix& dense, double drop_below) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < dense.rows; ++i)
    for (std::size_t j = 0; j < dense.cols; ++j)
      if (std::abs(dense(i, j)) > drop_below) t.push_back({i, j, dense(i, j)});
  return from_triplets(dense.rows, dense.cols, std::move(t));
}

double SparseMatrix::coeff(std::size_t i, std::size_t j) const {
  const auto begin = col_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
  const auto end = col_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
  const auto it = std::lower_bound(begin, end, j);
  return (it != end && *it == j) ? val_[static_cast<std::size_t>(it - col_.begin())] : 0.0;
}

std::vector<double> SparseMatrix::diagonal() const {
  std::vector<double> d(std::min(rows_, cols_), 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = coeff(i, i);
  return d;
}

std::vector<double> SparseMatrix::row_sums() const {
  std::vector<double> s(rows_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q) s[i] += val_[q];
  return s;
}

double SparseMatrix::norm_inf() const {
  double best = 0.0;
  for (std::size_t i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (std::size_t q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q) s += std::abs(val_[q]);
    best = std::max(best, s);
  }
  return best;
}

double SparseMatrix::max_asymmetry() const {
  if (rows_ != cols_) throw std::invalid_argument("max_asymmetry: matrix is not square");
  double worst = 0.0;
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q)
      worst = std::max(worst, std::abs(val_[q] - coeff(col_[q], i)));
  return worst;
}

double SparseMatrix::mean_nonzeros_per_row() const {
  if (rows_ == 0) return 0.0;
  std::size_t nz = 0;
  for (double v : val_)
    if (v != 0.0) ++nz;
  return static_cast<double>(nz) / static_cast<double>(rows_);
}

SparseMatrix SparseMatrix::transpose() const {
  std::vector<Triplet> t;
  t.reserve(nnz());
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q) t.push_back({col_[q], i, val_[q]});
  return from_triplets(cols_, rows_, std::move(t));
}

Matrix SparseMatrix::to_dense() const {
  Matrix d(rows_, cols_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q) d(i, col_[q]) = val_[q];
  return d;
}

void SparseMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  if (x.size() != cols_ || y.size() != rows_)
    throw std::invalid_argument("spmv: dimension mismatch (" + std::to_string(rows_) + "x" + std::to_string(cols_) +
                                " times " + std::to_string(x.size()) + ")");
  kernels::active().spmv_csr(rows_, row_ptr_.data(), col_.data(), val_.data(), x.data(), y.data());
}

std::vector<double> SparseMatrix::multiply(std::span<const double> x) const {
  std::vector<double> y(rows_);
  multiply(x, y);
  return y;
}

std::vector<double> spmv(const SparseMatrix& A, std::span<const double> x) { return A.multiply(x); }

MassVector::MassVector(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!(values_[i] > 0.0) || !std::isfinite(values_[i]))
      throw std::invalid_argument("MassVector: entry " + std::to_string(i) + " is not positive");
}

double MassVector::mean() const {
  if (values_.empty()) return 0.0;
  return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

MassVector MassVector::normalized() const {
  const double m = mean();
  std::vector<double> v(values_);
  for (double& x : v) x /= m;
  return MassVector(std::move(v));
}

namespace {

double norm2v(std::span<const double> v) { return std::sqrt(kernels::dot(v, v)); }

void remove_mean(std::span<double> v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (double& x : v) x -= m;
}

}  // namespace

CgResult cg_solve(const SparseMatrix& A, std::span<const double> b_in, const CgOptions& options,
                  std::span<const double> x0) {
  const std::size_t n = A.rows();
  if (A.cols() != n || b_in.size() != n) throw std::invalid_argument("cg_solve: dimension mismatch");
  std::vector<double> b(b_in.begin(), b_in.end());
  if (options.deflate_constant) remove_mean(b);
  const std::size_t max_iter = options.max_iter ? options.max_iter : 10 * std::max<std::size_t>(n, 1);

  CgResult result;
  result.x.assign(n, 0.0);
  if (!x0.empty()) {
    if (x0.size() != n) throw std::invalid_argument("cg_solve: initial guess has wrong size");
    result.x.assign(x0.begin(), x0.end());
  }
  const double bnorm = norm2v(b);
  if (bnorm == 0.0) {
    result.x.assign(n, 0.0);
    return result;
  }

  std::vector<double> inv_diag = A.diagonal();
  for (double& d : inv_diag) d = d > 0.0 ? 1.0 / d : 1.0;

  std::vector<double> r(n), z(n), p(n), Ap(n);
  A.multiply(result.x, Ap);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
  if (options.deflate_constant) remove_mean(r);
  auto precondition = [&] {
    for (std::size_t i = 0; i < n; ++i) z[i] = inv_diag[i] * r[i];
    if (options.deflate_constant) remove_mean(z);
  };
  precondition();
  p = z;
  double rz = kernels::dot(r, z);
  double rel = norm2v(r) / bnorm;
  std::size_t it = 0;
  while (rel > options.tol && it < max_iter) {
    A.multiply(p, Ap);
    const double pAp = kernels::dot(p, Ap);
    if (!(pAp > 0.0)) break;
    const double alpha = rz / pAp;
    kernels::axpy(alpha, p, result.x);
    kernels::axpy(-alpha, Ap, r);
    ++it;
    // Recompute the true residual periodically to avoid drift.
    if (it % 50 == 0) {
      A.multiply(result.x, Ap);
      for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
      if (options.deflate_constant) remove_mean(r);
    }
    rel = norm2v(r) / bnorm;
    if (rel <= options.tol) break;
    precondition();
    const double rz_new = kernels::dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  A.multiply(result.x, Ap);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - Ap[i];
  if (options.deflate_constant) {
    remove_mean(r);
    remove_mean(result.x);
  }
  result.relative_residual = norm2v(r) / bnorm;
  result.iterations = it;
  if (!(result.relative_residual <= options.tol * 10.0))
    throw SolverError("cg_solve: no convergence after " + std::to_string(it) + " iterations",
                      result.relative_residual);
  return result;
}

void save_matrix_market(const SparseMatrix& A, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << A.rows() << ' ' << A.cols() << ' ' << A.nnz() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t q = A.row_ptr()[i]; q < A.row_ptr()[i + 1]; ++q) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), A.values()[q]);
      out << i + 1 << ' ' << A.col()[q] + 1 << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf))
          << '\n';
    }
}

SparseMatrix load_matrix_market(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("%%MatrixMarket", 0) != 0)
    throw std::runtime_error(path.string() + ": missing MatrixMarket banner");
  const bool symmetric = line.find("symmetric") != std::string::npos;
  if (line.find("coordinate") == std::string::npos)
    throw std::runtime_error(path.string() + ": only coordinate format is supported");
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '%') break;
  std::istringstream header(line);
  std::size_t rows = 0, cols = 0, nnz = 0;
  if (!(header >> rows >> cols >> nnz)) throw std::runtime_error(path.string() + ": bad size line");
  std::vector<Triplet> t;
  t.reserve(symmetric ? 2 * nnz : nnz);
  for (std::size_t q = 0; q < nnz; ++q) {
    std::size_t i = 0, j = 0;
    double v = 0.0;
    if (!(in >> i >> j >> v)) throw std::runtime_error(path.string() + ": truncated entry list");
    if (i == 0 || j == 0 || i > rows || j > cols) throw std::runtime_error(path.string() + ": index out of range");
    t.push_back({i - 1, j - 1, v});
    if (symmetric && i != j) t.push_back({j - 1, i - 1, v});
  }
  return SparseMatrix::from_triplets(rows, cols, std::move(t));
}

void save_vector(std::span<const double> v, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[32];
  for (double x : v) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    out << std::string_view(buf, static_cast<std::size_t>(ptr - buf)) << '\n';
  }
}

std::vector<double> load_vector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '%' || line[0] == '#') continue;
    double x = 0.0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), x);
    if (ec != std::errc()) throw std::runtime_error(path.string() + ": bad value '" + line + "'");
    v.push_back(x);
  }
  return v;
}

}  // namespace pclap
