#include "test_main.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>

#include "pclap/model.hpp"

using namespace pclap;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.enc_channels = {8, 8, 8};
  c.dec_channels = {8, 16, 16};
  c.blocks = {1, 1, 1};
  c.feature_dim = 8;
  c.mlp_hidden = 16;
  c.groups = 4;
  return c;
}

std::vector<Vec3> blob_points(int resolution, std::uint64_t seed) {
  return normalize_unit_box(make_shape(ShapeKind::BlendedBlob, resolution, seed)).vertices;
}

std::map<std::pair<std::size_t, std::size_t>, double> weight_map(const KnnGraph& g, const LaplacianPair& pair) {
  std::map<std::pair<std::size_t, std::size_t>, double> m;
  for (const auto& e : g.undirected_edges()) m[{e.i, e.j}] = -pair.stiffness.coeff(e.i, e.j);
  return m;
}

}  // namespace

TEST_CASE("input signal") {
  const auto pts = blob_points(500, 1);
  const KnnGraph g = build_knn(pts, 8);
  const Matrix s = input_signal(g);
  REQUIRE(s.cols == 4);
  for (std::size_t i = 0; i < g.num_vertices(); ++i) {
    CHECK(s(i, 0) == 1.0);
    CHECK(s(i, 1) == 1.0);
    CHECK(s(i, 2) == 1.0);
    CHECK(s(i, 3) == static_cast<double>(g.degree(i)) / 8.0);
  }
  std::vector<Vec3> shifted = pts;
  for (auto& p : shifted) p += Vec3{5, -2, 1};
  CHECK(input_signal(build_knn(shifted, 8)) == s);
}

TEST_CASE("graph_conv matches the per-edge message formula") {
  Rng rng(3);
  const std::vector<Vec3> x{{0, 0, 0}, {1, 0.2, 0}, {0.3, 1, 0.5}};
  const KnnGraph g(x, {{1, 2}, {0}, {0}}, 2);
  const std::size_t cin = 3, cout = 2;
  Matrix P(3, cin), W0(cin, cout), W1(cin + 4, cout);
  for (double& v : P.data) v = rng.normal();
  for (double& v : W0.data) v = rng.normal();
  for (double& v : W1.data) v = rng.normal();
  Matrix W1p(cin, cout), W1g(4, cout);
  for (std::size_t r = 0; r < cin; ++r)
    for (std::size_t c = 0; c < cout; ++c) W1p(r, c) = W1(r, c);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < cout; ++c) W1g(r, c) = W1(cin + r, c);

  ad::Tape t;
  const auto out = graph_conv(t.constant(P), adjacency_matrix(g), edge_geometry_sums(g), t.constant(W0),
                              t.constant(W1p), t.constant(W1g));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < cout; ++c) {
      double ref = 0;
      for (std::size_t r = 0; r < cin; ++r) ref += P(i, r) * W0(r, c);
      for (std::size_t j : g.neighbors(i)) {
        const Vec3 v = x[i] - x[j];
        std::vector<double> msg(P.row(j).begin(), P.row(j).end());
        msg.insert(msg.end(), {v.x, v.y, v.z, norm(v)});
        for (std::size_t r = 0; r < msg.size(); ++r) ref += W1(r, c) * msg[r];
      }
      CHECK(std::abs(out.value()(i, c) - ref) < 1e-12);
    }
}

TEST_CASE("graph_conv agrees with gather, per-edge linear, scatter") {
  Rng rng(8);
  const auto pts = blob_points(500, 2);
  const KnnGraph g = build_knn(pts, 8);
  const std::size_t n = g.num_vertices(), cin = 5, cout = 4;
  Matrix P(n, cin), W0(cin, cout), W1p(cin, cout), W1g(4, cout);
  for (Matrix* m : {&P, &W0, &W1p, &W1g})
    for (double& v : m->data) v = rng.normal();
  ad::Tape t;
  const auto fast = graph_conv(t.constant(P), adjacency_matrix(g), edge_geometry_sums(g), t.constant(W0),
                               t.constant(W1p), t.constant(W1g));

  std::vector<std::size_t> src, dst;
  Matrix geo(g.num_directed_edges(), 4);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : g.neighbors(i)) {
      const Vec3 v = pts[i] - pts[j];
      geo.row(src.size())[0] = v.x;
      geo.row(src.size())[1] = v.y;
      geo.row(src.size())[2] = v.z;
      geo.row(src.size())[3] = norm(v);
      src.push_back(j);
      dst.push_back(i);
    }
  Matrix W1(cin + 4, cout);
  for (std::size_t r = 0; r < cin; ++r)
    for (std::size_t c = 0; c < cout; ++c) W1(r, c) = W1p(r, c);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < cout; ++c) W1(cin + r, c) = W1g(r, c);
  const auto Pv = t.constant(P);
  const auto msgs = ad::matmul(ad::concat_cols(ad::gather_rows(Pv, src), t.constant(geo)), t.constant(W1));
  const auto slow = ad::add(ad::matmul(Pv, t.constant(W0)), ad::scatter_sum(msgs, dst, n));
  for (std::size_t q = 0; q < fast.value().size(); ++q)
    CHECK(std::abs(fast.value().data[q] - slow.value().data[q]) < 1e-11);
}

TEST_CASE("graph_conv: isolated vertex and translation") {
  Rng rng(2);
  const KnnGraph g({{0, 0, 0}, {1, 0, 0}, {9, 9, 9}}, {{1}, {0}, {}}, 1);
  Matrix P(3, 2), W(2, 2), Wg(4, 2);
  for (Matrix* m : {&P, &W, &Wg})
    for (double& v : m->data) v = rng.normal();
  ad::Tape t;
  const auto out = graph_conv(t.constant(P), adjacency_matrix(g), edge_geometry_sums(g), t.constant(W),
                              t.constant(W), t.constant(Wg));
  for (std::size_t c = 0; c < 2; ++c) CHECK(out.value()(2, c) == P(2, 0) * W(0, c) + P(2, 1) * W(1, c));

  std::vector<Vec3> pts = g.positions();
  for (auto& p : pts) p += Vec3{5, -2, 1};
  const KnnGraph h(pts, {{1}, {0}, {}}, 1);
  const auto moved = graph_conv(t.constant(P), adjacency_matrix(h), edge_geometry_sums(h), t.constant(W),
                                t.constant(W), t.constant(Wg));
  for (std::size_t q = 0; q < out.value().size(); ++q)
    CHECK(std::abs(out.value().data[q] - moved.value().data[q]) < 1e-12);
}

TEST_CASE("model output: one nonnegative weight per undirected edge, positive mean-1 masses") {
  const auto pts = blob_points(600, 5);
  const KnnGraph g = build_knn(pts, 8);
  const LaplacianModel model(ModelConfig::desk(), 11);
  const GraphInput in = prepare_graph(g, model.config());
  ad::Tape t(false);
  const ModelOutput out = model.forward(t, in);
  CHECK(out.edge_weights.rows() == g.undirected_edges().size());
  CHECK(out.features.cols() == 64);
  for (double w : out.edge_weights.value().data) CHECK(w >= 0.0);
  double mean = 0;
  for (double m : out.masses.value().data) {
    CHECK(m > 0.0);
    mean += m;
  }
  CHECK(std::abs(mean / g.num_vertices() - 1.0) < 1e-12);

  // The edge input (p_i - p_j)^2 is symmetric, so swapping endpoints gives the same weight.
  GraphInput swapped = in;
  std::swap(swapped.edge_i, swapped.edge_j);
  ad::Tape t2(false);
  CHECK(model.forward(t2, swapped).edge_weights.value() == out.edge_weights.value());

  const LaplacianPair pair = model.predict(g);
  CHECK(pair.source == LaplacianSource::Learned);
  CHECK(pair.stiffness.max_asymmetry() == 0.0);
  CHECK(pair.stiffness.mean_nonzeros_per_row() == doctest::Approx(1.0 + 2.0 * g.undirected_edges().size() / g.num_vertices()));
}

TEST_CASE("vertex permutation commutes with the model") {
  const auto pts = blob_points(500, 9);
  const std::size_t n = pts.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(4);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  std::vector<Vec3> permuted(n);
  for (std::size_t i = 0; i < n; ++i) permuted[perm[i]] = pts[i];

  const LaplacianModel model(tiny_config(), 3);
  const KnnGraph ga = build_knn(pts, 8), gb = build_knn(permuted, 8);
  const LaplacianPair a = model.predict(ga), b = model.predict(gb);
  double worst = 0;
  for (std::size_t i = 0; i < n; ++i) {
    worst = std::max(worst, std::abs(a.mass[i] - b.mass[perm[i]]));
    for (std::size_t j : ga.neighbors(i)) {
      REQUIRE(gb.has_edge(perm[i], perm[j]));
      worst = std::max(worst, std::abs(a.stiffness.coeff(i, j) - b.stiffness.coeff(perm[i], perm[j])));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("translation leaves the predicted operator unchanged") {
  const auto pts = blob_points(500, 12);
  const LaplacianModel model(tiny_config(), 5);
  const KnnGraph g = build_knn(pts, 8);
  const LaplacianPair base = model.predict(g);
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    const Vec3 shift{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    std::vector<Vec3> moved = pts;
    for (auto& p : moved) p += shift;
    const KnnGraph h = build_knn(moved, 8);
    REQUIRE(h.col() == g.col());
    const LaplacianPair pair = model.predict(h);
    double worst = 0;
    for (std::size_t q = 0; q < pair.stiffness.nnz(); ++q)
      worst = std::max(worst, std::abs(pair.stiffness.values()[q] - base.stiffness.values()[q]));
    for (std::size_t i = 0; i < pair.size(); ++i) worst = std::max(worst, std::abs(pair.mass[i] - base.mass[i]));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("model initialization is seeded and checkpoints restore predictions") {
  const LaplacianModel a(tiny_config(), 7), b(tiny_config(), 7), c(tiny_config(), 8);
  CHECK(a.params().get("stem.conv.W0").value == b.params().get("stem.conv.W0").value);
  CHECK(!(a.params().get("stem.conv.W0").value == c.params().get("stem.conv.W0").value));

  const auto dir = std::filesystem::temp_directory_path() / "pclap_test_model";
  std::filesystem::remove_all(dir);
  a.save(dir);
  const LaplacianModel back = LaplacianModel::load(dir);
  CHECK(back.config() == a.config());
  const KnnGraph g = build_knn(blob_points(500, 1), 8);
  CHECK(back.predict(g).stiffness.values() == a.predict(g).stiffness.values());
}

TEST_CASE("config validation and serialization") {
  ModelConfig c = ModelConfig::desk();
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  CHECK(ModelConfig::paper().dec_channels[2] == 512);
  c.blocks[1] = 0;
  CHECK_THROWS(c.validate());
  c = ModelConfig::desk();
  c.enc_channels[0] = 30;
  CHECK_THROWS(c.validate());
}
