#include "test_main.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "pclap/knn_graph.hpp"
#include "pclap/random.hpp"

using namespace pclap;

namespace {

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  return pts;
}

// Exhaustive all-pairs oracle: symmetrized k-NN sets.
std::vector<std::set<std::size_t>> oracle_neighbors(const std::vector<Vec3>& pts, std::size_t k) {
  const std::size_t n = pts.size();
  std::vector<std::set<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d.push_back({norm2(pts[i] - pts[j]), j});
    std::sort(d.begin(), d.end());
    for (std::size_t q = 0; q < k; ++q) {
      out[i].insert(d[q].second);
      out[d[q].second].insert(i);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("two points with k=1 give the mutual edge plus self-loops") {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
  const KnnGraph g = build_knn(pts, 1);
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  CHECK(g.edges() == expected);
  CHECK(g.undirected_edges().size() == 1);
}

TEST_CASE("collinear points: symmetrization adds the reverse edge") {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  CHECK(KdTree(pts).nearest(0, 1) == std::vector<std::size_t>{1});
  CHECK(KdTree(pts).nearest(1, 1) == std::vector<std::size_t>{0});
  CHECK(KdTree(pts).nearest(2, 1) == std::vector<std::size_t>{1});
  const KnnGraph g = build_knn(pts, 1);
  CHECK(g.has_edge(1, 2));
  CHECK(g.has_edge(2, 1));
  CHECK_FALSE(g.has_edge(0, 2));
  CHECK(g.degree(1) == 2);
}

TEST_CASE("distance ties break by smaller index") {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}};
  CHECK(KdTree(pts).nearest(0, 2) == std::vector<std::size_t>{1, 2});
  CHECK(brute_force_nearest(pts, 0, 2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("k-d tree matches exhaustive scan including grid ties") {
  for (std::size_t n : {50u, 120u, 200u}) {
    auto pts = random_points(n, n);
    const KdTree tree(pts);
    for (std::size_t i = 0; i < n; ++i) CHECK(tree.nearest(i, 8) == brute_force_nearest(pts, i, 8));
  }
  // Integer lattice: many exact ties.
  std::vector<Vec3> grid;
  for (int x = 0; x < 6; ++x)
    for (int y = 0; y < 6; ++y)
      for (int z = 0; z < 4; ++z) grid.push_back({double(x), double(y), double(z)});
  const KdTree tree(grid);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(tree.nearest(i, 8) == brute_force_nearest(grid, i, 8));
}

TEST_CASE("50 uniform random points: neighbor sets equal the all-pairs oracle") {
  const auto pts = random_points(50, 2024);
  const KnnGraph g = build_knn(pts, 8);
  const auto oracle = oracle_neighbors(pts, 8);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto nb = g.neighbors(i);
    CHECK(std::set<std::size_t>(nb.begin(), nb.end()) == oracle[i]);
  }
}

TEST_CASE("graph invariants: symmetric, self-looped, degree >= k, deterministic") {
  const auto pts = random_points(500, 8);
  const KnnGraph g = build_knn(pts, 8);
  const KnnGraph h = build_knn(pts, 8);
  CHECK(g.edges() == h.edges());
  std::size_t total = 0;
  for (std::size_t i = 0; i < g.num_vertices(); ++i) {
    CHECK(g.degree(i) >= 8);
    CHECK(g.has_edge(i, i));
    for (std::size_t j : g.neighbors(i)) CHECK(g.has_edge(j, i));
    const auto nb = g.neighbors(i);
    CHECK(std::adjacent_find(nb.begin(), nb.end()) == nb.end());
    total += g.degree(i) + 1;
  }
  const double mean = static_cast<double>(total) / g.num_vertices();
  CHECK(mean <= 17.0);
  // Undirected edge ids are consistent with CSR slots.
  for (std::size_t i = 0; i < g.num_vertices(); ++i)
    for (std::size_t q = g.row_ptr()[i]; q < g.row_ptr()[i + 1]; ++q) {
      const auto e = g.undirected_edges()[g.slot_edge()[q]];
      CHECK(e.i == std::min(i, g.col()[q]));
      CHECK(e.j == std::max(i, g.col()[q]));
    }
}

TEST_CASE("build_knn rejects too few points") {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(build_knn(pts, 2), std::invalid_argument);
}

TEST_CASE("coarsen: one voxel collapses to the centroid") {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.1, 0, 0}, {0, 0.2, 0}, {0.1, 0.1, 0.1}};
  const KnnGraph g = build_knn(pts, 2);
  const auto level = coarsen_by_voxel(g, 1.0);
  REQUIRE(level.num_coarse() == 1);
  CHECK(level.coarse.positions()[0].x == doctest::Approx(0.05));
  CHECK(level.coarse.positions()[0].y == doctest::Approx(0.075));
  CHECK(level.coarse.degree(0) == 0);
}

TEST_CASE("coarsen: cube corners with voxel 1 are a bijection") {
  std::vector<Vec3> pts;
  for (int a : {-1, 1})
    for (int b : {-1, 1})
      for (int c : {-1, 1}) pts.push_back({double(a), double(b), double(c)});
  const KnnGraph g = build_knn(pts, 3);
  const auto level = coarsen_by_voxel(g, 1.0);
  REQUIRE(level.num_coarse() == 8);
  std::set<std::size_t> image(level.mapping.begin(), level.mapping.end());
  CHECK(image.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(level.coarse.positions()[level.mapping[i]] == pts[i]);
  // Coarse edges are the image of the fine ones.
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j : g.neighbors(i)) CHECK(level.coarse.has_edge(level.mapping[i], level.mapping[j]));
}

TEST_CASE("coarsen: voxel larger than the bounding box yields one vertex") {
  const auto pts = random_points(100, 3);
  const KnnGraph g = build_knn(pts, 8);
  CHECK(coarsen_by_voxel(g, 2.5).num_coarse() == 1);
  CHECK_THROWS(coarsen_by_voxel(g, 0.0));
}

TEST_CASE("coarsen: mapping total, surjective, centroids are means") {
  const auto pts = random_points(300, 21);
  const KnnGraph g = build_knn(pts, 8);
  const auto levels = build_hierarchy(g, 2, 0.25);
  REQUIRE(levels.size() == 2);
  CHECK(levels[1].voxel_size == 0.5);
  const auto& l0 = levels[0];
  std::vector<Vec3> sum(l0.num_coarse());
  std::vector<std::size_t> cnt(l0.num_coarse(), 0);
  for (std::size_t i = 0; i < l0.num_fine(); ++i) {
    REQUIRE(l0.mapping[i] < l0.num_coarse());
    sum[l0.mapping[i]] += pts[i];
    cnt[l0.mapping[i]] += 1;
  }
  for (std::size_t c = 0; c < l0.num_coarse(); ++c) {
    CHECK(cnt[c] > 0);
    CHECK(norm(sum[c] / double(cnt[c]) - l0.coarse.positions()[c]) < 1e-12);
  }
}

TEST_CASE("pool / unpool features") {
  SUBCASE("two vertices in one voxel average") {
    const std::vector<Vec3> pts{{0, 0, 0}, {0.1, 0, 0}};
    const auto level = coarsen_by_voxel(build_knn(pts, 1), 1.0);
    const Matrix pooled = pool_features(level, Matrix(2, 1, {2.0, 4.0}));
    CHECK(pooled.rows == 1);
    CHECK(pooled(0, 0) == 3.0);
    const Matrix back = unpool_features(level, pooled);
    CHECK(back == Matrix(2, 1, {3.0, 3.0}));
  }
  SUBCASE("bijective mapping permutes rows") {
    const std::vector<Vec3> pts{{3, 0, 0}, {0, 0, 0}, {1.5, 0, 0}};
    const auto level = coarsen_by_voxel(build_knn(pts, 1), 1.0);
    const Matrix f(3, 1, {10, 20, 30});
    const Matrix pooled = pool_features(level, f);
    for (std::size_t i = 0; i < 3; ++i) CHECK(pooled(level.mapping[i], 0) == f(i, 0));
  }
  SUBCASE("random 20-point case vs naive grouping") {
    const auto pts = random_points(20, 99);
    const auto level = coarsen_by_voxel(build_knn(pts, 4), 0.7);
    Rng rng(1);
    Matrix f(20, 3);
    for (double& v : f.data) v = rng.normal();
    const Matrix pooled = pool_features(level, f);
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < 20; ++i) groups[level.mapping[i]].push_back(i);
    for (const auto& [c, members] : groups)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double s = 0;
        for (std::size_t i : members) s += f(i, ch);
        CHECK(std::abs(pooled(c, ch) - s / members.size()) < 1e-12);
      }
    // unpool(pool(x)) = x for per-voxel constant fields
    Matrix constant(20, 3);
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t ch = 0; ch < 3; ++ch) constant(i, ch) = 1.0 + level.mapping[i] * 0.5 + ch;
    const Matrix round = unpool_features(level, pool_features(level, constant));
    for (std::size_t q = 0; q < constant.size(); ++q) CHECK(std::abs(round.data[q] - constant.data[q]) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    const std::vector<Vec3> pts{{0, 0, 0}, {0.1, 0, 0}};
    const auto level = coarsen_by_voxel(build_knn(pts, 1), 1.0);
    CHECK_THROWS(pool_features(level, Matrix(3, 1)));
    CHECK_THROWS(unpool_features(level, Matrix(2, 1)));
  }
}

TEST_CASE("coarsening is translation invariant") {
  const auto pts = random_points(400, 5);
  std::vector<Vec3> shifted = pts;
  for (Vec3& p : shifted) p += Vec3{0.3173, -1.9127, 0.0411};
  const auto a = build_hierarchy(build_knn(pts, 8), 2);
  const auto b = build_hierarchy(build_knn(shifted, 8), 2);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(a[l].mapping == b[l].mapping);
    CHECK(a[l].coarse.edges() == b[l].coarse.edges());
  }
}
