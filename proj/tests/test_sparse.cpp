#include "test_main.hpp"

#include <Eigen/Dense>
#include <filesystem>

#include "pclap/random.hpp"
#include "pclap/sparse.hpp"

using namespace pclap;

namespace {

SparseMatrix random_sparse(std::size_t n, double density, Rng& rng) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (rng.uniform() < density) t.push_back({i, j, rng.uniform(-1, 1)});
  return SparseMatrix::from_triplets(n, n, t);
}

// Weighted Laplacian of a random connected graph (ring plus chords).
SparseMatrix random_laplacian(std::size_t n, Rng& rng) {
  std::vector<Triplet> t;
  auto add = [&](std::size_t i, std::size_t j, double w) {
    t.push_back({i, j, -w});
    t.push_back({j, i, -w});
    t.push_back({i, i, w});
    t.push_back({j, j, w});
  };
  for (std::size_t i = 0; i < n; ++i) add(i, (i + 1) % n, rng.uniform(0.2, 2.0));
  for (std::size_t c = 0; c < 2 * n; ++c) {
    const std::size_t i = rng.index(n), j = rng.index(n);
    if (i != j) add(i, j, rng.uniform(0.1, 1.0));
  }
  return SparseMatrix::from_triplets(n, n, t);
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) e(i, j) = m(i, j);
  return e;
}

// Dense oracle for L x = lambda M x through the symmetric scaling.
Eigen::VectorXd dense_generalized_eigenvalues(const SparseMatrix& L, const MassVector& M) {
  Eigen::MatrixXd A = to_eigen(L.to_dense());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) /= std::sqrt(M[i] * M[j]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  return es.eigenvalues();
}

}  // namespace

TEST_CASE("spmv examples") {
  const std::vector<double> x{1.5, -2.0, 3.25};
  CHECK(spmv(SparseMatrix::identity(3), x) == x);
  const SparseMatrix A = SparseMatrix::from_dense(Matrix(2, 2, {2, -1, -1, 2}));
  CHECK(spmv(A, std::vector<double>{1, 1}) == std::vector<double>{1, 1});
  CHECK_THROWS(spmv(A, x));
}

TEST_CASE("random 30x30 sparse spmv vs dense multiply") {
  Rng rng(30);
  const SparseMatrix A = random_sparse(30, 0.2, rng);
  const Matrix D = A.to_dense();
  std::vector<double> x(30);
  for (double& v : x) v = rng.normal();
  const auto y = spmv(A, x);
  for (std::size_t i = 0; i < 30; ++i) {
    double ref = 0;
    for (std::size_t j = 0; j < 30; ++j) ref += D(i, j) * x[j];
    CHECK(std::abs(y[i] - ref) < 1e-12);
  }
}

TEST_CASE("spmv is linear") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const SparseMatrix A = random_sparse(25, 0.3, rng);
    std::vector<double> x(25), y(25), z(25);
    for (std::size_t i = 0; i < 25; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
    }
    const double a = rng.normal(), b = rng.normal();
    for (std::size_t i = 0; i < 25; ++i) z[i] = a * x[i] + b * y[i];
    const auto Az = spmv(A, z), Ax = spmv(A, x), Ay = spmv(A, y);
    for (std::size_t i = 0; i < 25; ++i) CHECK(std::abs(Az[i] - (a * Ax[i] + b * Ay[i])) < 1e-12);
  }
}

TEST_CASE("from_triplets sums duplicates and sorts columns") {
  const SparseMatrix A = SparseMatrix::from_triplets(2, 3, {{0, 2, 1.0}, {0, 0, 2.0}, {0, 2, 3.0}, {1, 1, -1.0}});
  CHECK(A.nnz() == 3);
  CHECK(A.coeff(0, 2) == 4.0);
  CHECK(A.col()[0] == 0);
}

TEST_CASE("cg_solve examples") {
  SUBCASE("identity converges in one iteration") {
    const std::vector<double> b{1, -2, 3};
    const auto r = cg_solve(SparseMatrix::identity(3), b);
    CHECK(r.iterations <= 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(r.x[i] == doctest::Approx(b[i]));
  }
  SUBCASE("diagonal system") {
    const SparseMatrix A = SparseMatrix::from_dense(Matrix(3, 3, {1, 0, 0, 0, 2, 0, 0, 0, 4}));
    const auto r = cg_solve(A, std::vector<double>{1, 2, 4});
    for (double v : r.x) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("random SPD 25x25 vs dense Cholesky") {
    Rng rng(25);
    Eigen::MatrixXd B(25, 25);
    for (Eigen::Index i = 0; i < 25; ++i)
      for (Eigen::Index j = 0; j < 25; ++j) B(i, j) = rng.uniform() < 0.3 ? rng.normal() : 0.0;
    Eigen::MatrixXd S = B * B.transpose() + Eigen::MatrixXd::Identity(25, 25);
    Matrix dense(25, 25);
    for (std::size_t i = 0; i < 25; ++i)
      for (std::size_t j = 0; j < 25; ++j) dense(i, j) = S(i, j);
    Eigen::VectorXd b(25);
    std::vector<double> bv(25);
    for (std::size_t i = 0; i < 25; ++i) bv[i] = b[i] = rng.normal();
    const Eigen::VectorXd ref = S.llt().solve(b);
    const auto r = cg_solve(SparseMatrix::from_dense(dense), bv);
    Eigen::VectorXd x(25);
    for (std::size_t i = 0; i < 25; ++i) x[i] = r.x[i];
    CHECK((x - ref).norm() / ref.norm() < 1e-8);
  }
  SUBCASE("PSD Laplacian with mean-zero right-hand side") {
    Rng rng(3);
    const SparseMatrix L = random_laplacian(40, rng);
    std::vector<double> b(40);
    for (double& v : b) v = rng.normal();
    CgOptions opt;
    opt.deflate_constant = true;
    const auto r = cg_solve(L, b, opt);
    const auto Lx = spmv(L, r.x);
    double mean = 0;
    for (double v : b) mean += v / 40;
    for (std::size_t i = 0; i < 40; ++i) CHECK(std::abs(Lx[i] - (b[i] - mean)) < 1e-8);
  }
  SUBCASE("non-convergence reports the residual") {
    const SparseMatrix A = SparseMatrix::from_dense(Matrix(2, 2, {1, 0, 0, 1e-9}));
    CgOptions opt;
    opt.max_iter = 1;
    opt.tol = 1e-14;
    // Hard system with a single allowed iteration.
    const SparseMatrix H = SparseMatrix::from_dense(Matrix(3, 3, {4, 1, 0, 1, 3, 1, 0, 1, 2}));
    CHECK_THROWS_AS(cg_solve(H, std::vector<double>{1, 2, 3}, opt), SolverError);
    (void)A;
  }
}

TEST_CASE("symmetric_eigen matches Eigen's dense solver") {
  Rng rng(77);
  for (std::size_t n : {1u, 2u, 5u, 17u, 60u}) {
    Matrix A(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) A(i, j) = A(j, i) = rng.normal();
    const DenseEigen mine = symmetric_eigen(A);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(to_eigen(A));
    for (std::size_t c = 0; c < n; ++c) {
      CHECK(std::abs(mine.values[c] - es.eigenvalues()[c]) < 1e-11);
      // A v = lambda v
      double res = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += A(i, j) * mine.vectors(j, c);
        res = std::max(res, std::abs(s - mine.values[c] * mine.vectors(i, c)));
      }
      CHECK(res < 1e-10);
    }
  }
}

TEST_CASE("eig_smallest: path graph P3 has eigenvalues {0,1,3}") {
  const SparseMatrix L = SparseMatrix::from_dense(Matrix(3, 3, {1, -1, 0, -1, 2, -1, 0, -1, 1}));
  const auto pairs = eig_smallest(L, MassVector::ones(3), 2);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs.values[0] == 0.0);
  CHECK(std::abs(pairs.values[1] - 1.0) < 1e-12);
  for (double v : pairs.vectors[0]) CHECK(std::abs(v - 1.0 / std::sqrt(3.0)) < 1e-14);
  CHECK_THROWS(eig_smallest(L, MassVector::ones(3), 3));
}

TEST_CASE("eig_smallest vs dense oracle on random weighted graphs with random masses") {
  Rng rng(12);
  for (std::size_t n : {30u, 90u, 200u}) {
    const SparseMatrix L = random_laplacian(n, rng);
    std::vector<double> m(n);
    for (double& v : m) v = rng.uniform(0.3, 3.0);
    const MassVector M = MassVector(m).normalized();
    const std::size_t count = std::min<std::size_t>(20, n - 1);
    const auto pairs = eig_smallest(L, M, count, {.seed = 5});
    const auto ref = dense_generalized_eigenvalues(L, M);
    REQUIRE(pairs.size() == count);
    CHECK(pairs.values[0] == 0.0);
    for (std::size_t c = 1; c < count; ++c) CHECK(std::abs(pairs.values[c] - ref[c]) <= 1e-8 * std::abs(ref[c]));
    // residual and M-orthonormality
    for (std::size_t a = 0; a < count; ++a) {
      const auto Lv = spmv(L, pairs.vectors[a]);
      double res = 0, lv = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = Lv[i] - pairs.values[a] * M[i] * pairs.vectors[a][i];
        res += r * r;
        lv += Lv[i] * Lv[i];
      }
      if (a > 0) CHECK(std::sqrt(res) <= 1e-8 * std::sqrt(lv));
      for (std::size_t b = a; b < count; ++b) {
        double ip = 0;
        for (std::size_t i = 0; i < n; ++i) ip += pairs.vectors[a][i] * M[i] * pairs.vectors[b][i];
        CHECK(std::abs(ip - (a == b ? 1.0 : 0.0)) < 1e-8);
      }
    }
    for (double v : pairs.values) CHECK(v >= -1e-10);
  }
}

TEST_CASE("eig_smallest resolves exactly degenerate pairs on a ring") {
  const std::size_t n = 64;
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = (i + 1) % n;
    t.push_back({i, j, -1});
    t.push_back({j, i, -1});
    t.push_back({i, i, 1});
    t.push_back({j, j, 1});
  }
  const SparseMatrix L = SparseMatrix::from_triplets(n, n, t);
  const auto pairs = eig_smallest(L, MassVector::ones(n), 21);
  for (std::size_t c = 1; c < 21; ++c) {
    const std::size_t freq = (c + 1) / 2;
    const double expected = 2.0 - 2.0 * std::cos(2.0 * 3.14159265358979323846 * freq / n);
    CHECK(std::abs(pairs.values[c] - expected) < 1e-10);
  }
}

TEST_CASE("eig_smallest is deterministic and fixes signs") {
  Rng rng(8);
  const SparseMatrix L = random_laplacian(70, rng);
  const auto a = eig_smallest(L, MassVector::ones(70), 10, {.seed = 3});
  const auto b = eig_smallest(L, MassVector::ones(70), 10, {.seed = 3});
  CHECK(a.values == b.values);
  CHECK(a.vectors == b.vectors);
  for (const auto& v : a.vectors) {
    std::size_t arg = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    CHECK(v[arg] > 0);
  }
}

TEST_CASE("MatrixMarket and vector files round-trip") {
  Rng rng(2);
  const SparseMatrix A = random_laplacian(15, rng);
  const auto dir = std::filesystem::temp_directory_path() / "pclap_test_sparse";
  std::filesystem::create_directories(dir);
  save_matrix_market(A, dir / "L.mtx");
  const SparseMatrix B = load_matrix_market(dir / "L.mtx");
  CHECK(B.row_ptr() == A.row_ptr());
  CHECK(B.col() == A.col());
  CHECK(B.values() == A.values());
  const std::vector<double> v{1.0 / 3.0, 2e-300, -7.5};
  save_vector(v, dir / "v.txt");
  CHECK(load_vector(dir / "v.txt") == v);
}

TEST_CASE("MassVector validation and normalization") {
  CHECK_THROWS(MassVector({1.0, 0.0}));
  CHECK_THROWS(MassVector({1.0, -2.0}));
  const MassVector m = MassVector({1.0, 2.0, 6.0}).normalized();
  CHECK(std::abs(m.mean() - 1.0) < 1e-15);
}
