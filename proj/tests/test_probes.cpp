#include "test_main.hpp"

#include <filesystem>
#include <numbers>

#include "pclap/probes.hpp"

using namespace pclap;

namespace {

struct Fixture {
  Mesh mesh = make_shape(ShapeKind::BlendedBlob, 600, 21);
  LaplacianPair gt = cotangent_laplacian(mesh);
  PointCloud cloud = points_from_mesh(mesh);
};

}  // namespace

TEST_CASE("spectral probes: count, scaling and zero-mode exclusion") {
  const Fixture fx;
  const EigenPairs eig = eig_smallest(fx.gt.stiffness, fx.gt.mass, 65);
  const ProbeSet set = spectral_probes_from(eig, 64);
  REQUIRE(set.num_probes() == 64);
  CHECK(set.num_vertices() == fx.mesh.num_vertices());
  for (std::size_t c = 0; c < 64; ++c) {
    CHECK(set.meta[c].kind == ProbeKind::Spectral);
    CHECK(set.meta[c].lambda == eig.values[c + 1]);
    CHECK(set.meta[c].lambda > 0);
    const double s = 1.0 / (eig.values[c + 1] + 0.1);
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < set.num_vertices(); ++i) {
      CHECK(set.values(i, c) == s * eig.vectors[c + 1][i]);
      mean += set.values(i, c);
    }
    mean /= set.num_vertices();
    for (std::size_t i = 0; i < set.num_vertices(); ++i) var += std::pow(set.values(i, c) - mean, 2);
    CHECK(var > 0);
  }
  // M-orthogonality after undoing the scale.
  for (std::size_t a = 0; a < 64; a += 7)
    for (std::size_t b = a + 1; b < 64; b += 5) {
      double ip = 0;
      for (std::size_t i = 0; i < set.num_vertices(); ++i) ip += set.values(i, a) * fx.gt.mass[i] * set.values(i, b);
      ip *= (set.meta[a].lambda + 0.1) * (set.meta[b].lambda + 0.1);
      CHECK(std::abs(ip) < 1e-8);
    }
  CHECK(spectral_probes(fx.gt, 64) == set);
}

TEST_CASE("spectral scale: lambda 0.9 gives unit scale") {
  EigenPairs eig;
  eig.values = {0.0, 0.9};
  eig.vectors = {{1, 1}, {0.5, -0.25}};
  const ProbeSet set = spectral_probes_from(eig, 1);
  CHECK(set.values(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(set.values(1, 0) == doctest::Approx(-0.25).epsilon(1e-15));
  CHECK_THROWS(spectral_probes_from(eig, 2));
}

TEST_CASE("spatial probes: 14 frequencies, bounded, deterministic") {
  const Fixture fx;
  const ProbeSet a = spatial_probes(fx.cloud, 7);
  REQUIRE(a.num_probes() == 14);
  for (int m = 0; m < 14; ++m) {
    const ProbeMeta& meta = a.meta[m];
    CHECK(meta.k == doctest::Approx(std::pow(2.0, m / 2.0)).epsilon(1e-15));
    CHECK(meta.psi >= 0.75);
    CHECK(meta.psi < 1.25);
    CHECK(meta.phi >= 0);
    CHECK(meta.phi < 2 * std::numbers::pi);
    CHECK(meta.a >= 0);
    CHECK(meta.b >= 0);
    CHECK(meta.c >= 0);
    CHECK(std::abs(meta.a + meta.b + meta.c - 1.0) < 1e-15);
    for (std::size_t i = 0; i < a.num_vertices(); ++i) CHECK(std::abs(a.values(i, m)) <= 1.0 / (2 * meta.k));
  }
  CHECK(spatial_probes(fx.cloud, 7) == a);
  CHECK(!(spatial_probes(fx.cloud, 8) == a));
}

TEST_CASE("sinusoid at the origin with zero phase vanishes") {
  ProbeMeta m;
  m.kind = ProbeKind::Sinusoid;
  m.k = 4;
  m.psi = 1.1;
  m.a = 0.2;
  m.b = 0.3;
  m.c = 0.5;
  CHECK(sinusoid_value(m, {0, 0, 0}) == 0.0);
  m.phi = std::numbers::pi / 2;
  CHECK(sinusoid_value(m, {0, 0, 0}) == doctest::Approx(1.0 / 8));
}

TEST_CASE("evaluation probe set layout") {
  const Fixture fx;
  const ProbeSet set = eval_probe_set(fx.gt, fx.cloud);
  REQUIRE(set.num_probes() == 112);
  std::size_t spectral = 0, sinus = 0, poly = 0;
  for (std::size_t c = 0; c < 112; ++c) {
    const auto kind = set.meta[c].kind;
    if (c < 64) CHECK(kind == ProbeKind::Spectral);
    else if (c < 106) CHECK(kind == ProbeKind::Sinusoid);
    else CHECK(kind == ProbeKind::Polynomial);
    spectral += kind == ProbeKind::Spectral;
    sinus += kind == ProbeKind::Sinusoid;
    poly += kind == ProbeKind::Polynomial;
  }
  CHECK(spectral == 64);
  CHECK(sinus == 42);
  CHECK(poly == 6);
  for (std::size_t c = 64; c < 106; ++c) {
    CHECK(set.meta[c].psi == 1.0);
    CHECK(set.meta[c].a + set.meta[c].b + set.meta[c].c == 1.0);
  }
  CHECK(set.meta[109].name == "x^2");
  // polynomial values follow the coordinates
  for (std::size_t i = 0; i < set.num_vertices(); ++i) {
    const Vec3 p = fx.cloud.points[i];
    CHECK(set.values(i, 106) == p.x);
    CHECK(set.values(i, 110) == p.y * p.y);
  }
}

TEST_CASE("polynomial x^2 at x = 0.5") {
  EigenPairs eig;
  eig.values.assign(65, 1.0);
  eig.values[0] = 0;
  eig.vectors.assign(65, std::vector<double>(1, 1.0));
  PointCloud cloud;
  cloud.points = {{0.5, -2.0, 3.0}};
  const ProbeSet set = eval_probe_set_from(eig, cloud);
  CHECK(set.values(0, 109) == 0.25);
  CHECK(set.values(0, 110) == 4.0);
}

TEST_CASE("probe files round-trip bit-exactly") {
  const Fixture fx;
  ProbeSet set = spatial_probes(fx.cloud, 3);
  const auto dir = std::filesystem::temp_directory_path() / "pclap_test_probes";
  std::filesystem::create_directories(dir);
  save_probes(set, dir / "p.bin");
  CHECK(load_probes(dir / "p.bin") == set);
  save_probes_csv(set, dir / "p.csv");
  CHECK(std::filesystem::file_size(dir / "p.csv") > 0);
  std::filesystem::resize_file(dir / "p.bin", std::filesystem::file_size(dir / "p.bin") - 8);
  CHECK_THROWS(load_probes(dir / "p.bin"));
}
