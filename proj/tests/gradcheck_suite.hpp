#pragma once

// Randomized finite-difference checks for every differentiable op, shared by
// the unit tests and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "pclap/autodiff.hpp"
#include "pclap/random.hpp"

namespace gradcheck_suite {

using pclap::Matrix;
using pclap::Rng;
using namespace pclap::ad;

struct OpCheck {
  std::string name;
  double worst_rel = 0.0;
  int instances = 0;
};

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

// Values bounded away from zero so ReLU kinks are not straddled by +-h.
inline Matrix away_from_zero(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(0.05, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return m;
}

inline std::vector<std::size_t> random_index(std::size_t count, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = rng.index(n);
  return idx;
}

using Case = std::function<GradcheckResult(Rng&, std::uint64_t)>;

inline std::vector<std::pair<std::string, Case>> cases() {
  std::vector<std::pair<std::string, Case>> out;
  auto dims = [](Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); };

  out.emplace_back("linear", [=](Rng& rng, std::uint64_t s) {
    const std::size_t n = dims(rng, 1, 6), a = dims(rng, 1, 5), b = dims(rng, 1, 5);
    return gradcheck([](Tape&, std::span<const Var> v) { return linear(v[0], v[1], v[2]); },
                     {random_matrix(n, a, rng), random_matrix(a, b, rng), random_matrix(1, b, rng)}, 1e-6, s);
  });
  out.emplace_back("add_sub_mul_scale", [=](Rng& rng, std::uint64_t s) {
    const std::size_t n = dims(rng, 1, 5), c = dims(rng, 1, 5);
    return gradcheck([](Tape&, std::span<const Var> v) { return scale(mul(add(v[0], v[1]), sub(v[0], v[2])), -1.7); },
                     {random_matrix(n, c, rng), random_matrix(n, c, rng), random_matrix(n, c, rng)}, 1e-6, s);
  });
  out.emplace_back("square", [=](Rng& rng, std::uint64_t s) {
    return gradcheck([](Tape&, std::span<const Var> v) { return square(v[0]); },
                     {random_matrix(dims(rng, 1, 6), dims(rng, 1, 4), rng)}, 1e-6, s);
  });
  out.emplace_back("relu", [=](Rng& rng, std::uint64_t s) {
    return gradcheck([](Tape&, std::span<const Var> v) { return relu(v[0]); },
                     {away_from_zero(dims(rng, 1, 6), dims(rng, 1, 6), rng)}, 1e-6, s);
  });
  out.emplace_back("softplus", [=](Rng& rng, std::uint64_t s) {
    return gradcheck([](Tape&, std::span<const Var> v) { return softplus(v[0]); },
                     {random_matrix(dims(rng, 1, 6), dims(rng, 1, 6), rng, -30, 30)}, 1e-6, s);
  });
  out.emplace_back("group_norm", [=](Rng& rng, std::uint64_t s) {
    // Two-element groups standardize to a constant +-1 whose gradient is pure noise.
    const std::size_t groups = dims(rng, 1, 3), gs = dims(rng, 3, 5), c = groups * gs;
    return gradcheck(
        [groups](Tape&, std::span<const Var> v) { return group_norm(v[0], groups, v[1], v[2]); },
        {random_matrix(dims(rng, 1, 5), c, rng, -2, 2), random_matrix(1, c, rng), random_matrix(1, c, rng)}, 1e-6, s);
  });
  out.emplace_back("concat_cols", [=](Rng& rng, std::uint64_t s) {
    const std::size_t n = dims(rng, 1, 5);
    return gradcheck([](Tape&, std::span<const Var> v) { return concat_cols(v[0], v[1]); },
                     {random_matrix(n, dims(rng, 1, 4), rng), random_matrix(n, dims(rng, 1, 4), rng)}, 1e-6, s);
  });
  out.emplace_back("gather_scatter", [=](Rng& rng, std::uint64_t s) {
    const std::size_t n = dims(rng, 2, 8), e = dims(rng, 1, 20);
    const auto src = random_index(e, n, rng), dst = random_index(e, n, rng);
    return gradcheck([=](Tape&, std::span<const Var> v) { return scatter_sum(gather_rows(v[0], src), dst, n); },
                     {random_matrix(n, dims(rng, 1, 4), rng)}, 1e-6, s);
  });
  out.emplace_back("sparse_matmul", [=](Rng& rng, std::uint64_t s) {
    const std::size_t n = dims(rng, 2, 8), m = dims(rng, 1, 8);
    std::vector<pclap::Triplet> t;
    for (std::size_t k = 0; k < 3 * n; ++k) t.push_back({rng.index(m), rng.index(n), rng.normal()});
    const auto A = pclap::SparseMatrix::from_triplets(m, n, t);
    return gradcheck([A](Tape&, std::span<const Var> v) { return sparse_matmul(A, v[0]); },
                     {random_matrix(n, dims(rng, 1, 4), rng)}, 1e-6, s);
  });
  out.emplace_back("pool_unpool", [=](Rng& rng, std::uint64_t s) {
    const std::size_t groups = dims(rng, 1, 4), n = groups + dims(rng, 0, 6);
    std::vector<std::size_t> map(n), counts(groups, 0);
    for (std::size_t i = 0; i < n; ++i) map[i] = i < groups ? i : rng.index(groups);
    for (auto g : map) ++counts[g];
    return gradcheck(
        [=](Tape&, std::span<const Var> v) { return mul(unpool(pool_mean(v[0], map, counts), map), v[0]); },
        {random_matrix(n, dims(rng, 1, 3), rng)}, 1e-6, s);
  });
  out.emplace_back("edge_laplacian", [=](Rng& rng, std::uint64_t s) {
    const std::size_t n = dims(rng, 2, 7), e = dims(rng, 1, 12);
    std::vector<std::size_t> ei(e), ej(e);
    for (std::size_t k = 0; k < e; ++k) {
      ei[k] = rng.index(n);
      ej[k] = (ei[k] + 1 + rng.index(n - 1)) % n;
    }
    return gradcheck([=](Tape&, std::span<const Var> v) { return edge_laplacian(v[0], v[1], ei, ej); },
                     {random_matrix(e, 1, rng, 0, 2), random_matrix(n, dims(rng, 1, 4), rng)}, 1e-6, s);
  });
  out.emplace_back("div_rows", [=](Rng& rng, std::uint64_t s) {
    const std::size_t n = dims(rng, 1, 6);
    return gradcheck([](Tape&, std::span<const Var> v) { return div_rows(v[0], v[1]); },
                     {random_matrix(n, dims(rng, 1, 4), rng), random_matrix(n, 1, rng, 0.5, 2.0)}, 1e-6, s);
  });
  out.emplace_back("normalize_mean", [=](Rng& rng, std::uint64_t s) {
    return gradcheck([](Tape&, std::span<const Var> v) { return normalize_mean(v[0]); },
                     {random_matrix(dims(rng, 1, 8), 1, rng, 0.5, 2.0)}, 1e-6, s);
  });
  out.emplace_back("sum_mean", [=](Rng& rng, std::uint64_t s) {
    return gradcheck([](Tape&, std::span<const Var> v) { return add(sum(square(v[0])), mean(v[0])); },
                     {random_matrix(dims(rng, 1, 5), dims(rng, 1, 5), rng)}, 1e-6, s);
  });
  out.emplace_back("weighted_column_sumsq", [=](Rng& rng, std::uint64_t s) {
    const std::size_t c = dims(rng, 1, 5);
    std::vector<double> w(c);
    for (double& x : w) x = rng.uniform(0.1, 10);
    return gradcheck([w](Tape&, std::span<const Var> v) { return weighted_column_sumsq(v[0], w); },
                     {random_matrix(dims(rng, 1, 5), c, rng)}, 1e-6, s);
  });
  return out;
}

// Runs each case on `instances` random draws; returns the worst relative
// error per op.
inline std::vector<OpCheck> run_all(int instances, std::uint64_t seed) {
  std::vector<OpCheck> results;
  const auto all = cases();
  for (std::size_t c = 0; c < all.size(); ++c) {
    const auto& [name, fn] = all[c];
    OpCheck check{name, 0.0, 0};
    Rng rng(pclap::mix_seed(seed, c));
    for (int k = 0; k < instances; ++k) {
      const auto r = fn(rng, static_cast<std::uint64_t>(k));
      check.worst_rel = std::max(check.worst_rel, r.max_rel_error);
      ++check.instances;
    }
    results.push_back(check);
  }
  return results;
}

}  // namespace gradcheck_suite
