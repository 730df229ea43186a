#pragma once

// Dense inner-loop kernels with a portable scalar reference and an AVX2/FMA
// variant. The variant is chosen once at startup from CPUID, and can be
// forced with PCLAP_SIMD=scalar|avx2 or set_backend().

#include <cstddef>
#include <span>
#include <string_view>

namespace pclap::kernels {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  Backend backend;
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n], all row-major.
  void (*gemm_nn)(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                  double* C);
  // C[k x n] += A^T * B with A[m x k], B[m x n].
  void (*gemm_tn)(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                  double* C);
  // C[m x k] += A * B^T with A[m x n], B[k x n].
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                  double* C);
  // y = A x for CSR A with `rows` rows.
  void (*spmv_csr)(std::size_t rows, const std::size_t* row_ptr, const std::size_t* col,
                   const double* val, const double* x, double* y);
};

const KernelTable& scalar_table();
// nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_table();

bool cpu_has_avx2();

// Currently selected table.
const KernelTable& active();
void set_backend(Backend b);
std::string_view backend_name();

// Convenience wrappers over active().
double dot(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace pclap::kernels
