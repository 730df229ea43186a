#include "test_main.hpp"

#include <cmath>
#include <vector>

#include "pclap/kernels.hpp"
#include "pclap/random.hpp"

using namespace pclap;
using kernels::KernelTable;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return worst;
}

// Naive triple loop used as the oracle for every backend.
std::vector<double> naive_gemm(std::size_t m, std::size_t k, std::size_t n, const std::vector<double>& A,
                               const std::vector<double>& B) {
  std::vector<double> C(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(A[i * k + p]) * B[p * n + j];
      C[i * n + j] = static_cast<double>(s);
    }
  return C;
}

std::vector<const KernelTable*> tables() {
  std::vector<const KernelTable*> out{&kernels::scalar_table()};
  if (auto* t = kernels::avx2_table()) out.push_back(t);
  return out;
}

std::vector<double> transpose(const std::vector<double>& A, std::size_t r, std::size_t c) {
  std::vector<double> T(A.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) T[j * r + i] = A[i * c + j];
  return T;
}

}  // namespace

TEST_CASE("AVX2 table availability follows CPUID") {
  CHECK((kernels::avx2_table() != nullptr) == kernels::cpu_has_avx2());
  MESSAGE("active backend: " << kernels::backend_name());
}

TEST_CASE("dot and axpy agree across backends on ragged lengths") {
  Rng rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 64u, 1001u}) {
    const auto a = random_vec(rng, n), b = random_vec(rng, n);
    long double ref = 0;
    for (std::size_t i = 0; i < n; ++i) ref += static_cast<long double>(a[i]) * b[i];
    for (const auto* t : tables()) {
      CHECK(std::abs(t->dot(a.data(), b.data(), n) - static_cast<double>(ref)) < 1e-12 * std::max<double>(1, n));
      std::vector<double> y = b;
      t->axpy(0.75, a.data(), y.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(y[i] == doctest::Approx(b[i] + 0.75 * a[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("gemm variants match the naive oracle for every backend") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.index(17), k = 1 + rng.index(13), n = 1 + rng.index(19);
    const auto A = random_vec(rng, m * k);
    const auto B = random_vec(rng, k * n);
    const auto ref = naive_gemm(m, k, n, A, B);
    for (const auto* t : tables()) {
      std::vector<double> C(m * n, 0.0);
      t->gemm_nn(m, k, n, A.data(), B.data(), C.data());
      CHECK(max_rel_diff(C, ref) < 1e-13);

      // A^T B with At stored as [k x m] -> pass At as the m-row operand.
      const auto At = transpose(A, m, k);  // k x m
      std::vector<double> C2(m * n, 0.0);
      t->gemm_tn(k, m, n, At.data(), B.data(), C2.data());
      CHECK(max_rel_diff(C2, ref) < 1e-13);

      const auto Bt = transpose(B, k, n);  // n x k
      std::vector<double> C3(m * n, 0.0);
      t->gemm_nt(m, k, n, A.data(), Bt.data(), C3.data());
      CHECK(max_rel_diff(C3, ref) < 1e-13);
    }
  }
}

TEST_CASE("gemm accumulates into C") {
  const std::vector<double> A{1, 2}, B{3, 4};
  for (const auto* t : tables()) {
    std::vector<double> C{10.0};
    t->gemm_nn(1, 2, 1, A.data(), B.data(), C.data());
    CHECK(C[0] == 21.0);
  }
}

TEST_CASE("CSR spmv agrees across backends") {
  Rng rng(9);
  const std::size_t rows = 40, cols = 35;
  std::vector<std::size_t> row_ptr{0}, col;
  std::vector<double> val;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j)
      if (rng.uniform() < 0.3) {
        col.push_back(j);
        val.push_back(rng.uniform(-2, 2));
      }
    row_ptr.push_back(col.size());
  }
  const auto x = random_vec(rng, cols);
  std::vector<double> ref(rows);
  kernels::scalar_table().spmv_csr(rows, row_ptr.data(), col.data(), val.data(), x.data(), ref.data());
  for (const auto* t : tables()) {
    std::vector<double> y(rows);
    t->spmv_csr(rows, row_ptr.data(), col.data(), val.data(), x.data(), y.data());
    CHECK(max_rel_diff(y, ref) < 1e-14);
  }
}

TEST_CASE("set_backend switches the active table") {
  const auto before = kernels::active().backend;
  kernels::set_backend(kernels::Backend::Scalar);
  CHECK(kernels::backend_name() == "scalar");
  if (kernels::avx2_table()) {
    kernels::set_backend(kernels::Backend::Avx2);
    CHECK(kernels::backend_name() == "avx2");
  } else {
    CHECK_THROWS(kernels::set_backend(kernels::Backend::Avx2));
  }
  kernels::set_backend(before);
}
