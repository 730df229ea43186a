#include "test_main.hpp"

#include <filesystem>
#include <fstream>
#include <numeric>

#include "full_loss_check.hpp"
#include "pclap/training.hpp"

using namespace pclap;

namespace {

LaplacianPair diag_pair(std::vector<double> diag, std::vector<double> mass) {
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < diag.size(); ++i)
    if (diag[i] != 0.0) t.push_back({i, i, diag[i]});
  const std::size_t n = diag.size();
  return {SparseMatrix::from_triplets(n, n, t), MassVector(std::move(mass)), LaplacianSource::Learned};
}

ProbeSet single_probe(std::vector<double> f) {
  const std::size_t n = f.size();
  return {Matrix(n, 1, std::move(f)), {ProbeMeta{}}};
}

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

std::vector<TrainingSample> small_samples(std::size_t count, const ModelConfig& config) {
  DatasetConfig d;
  d.num_shapes = count;
  d.max_resolution = 520;
  d.seed = 77;
  const Dataset ds = generate_dataset(d);
  std::vector<const ShapeRecord*> ptrs;
  for (const auto& s : ds.shapes) ptrs.push_back(&s);
  return make_training_samples(ptrs, config);
}

std::filesystem::path scratch(const char* name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("loss_laplacian examples") {
  const auto gt = diag_pair({0, 0}, {1, 1});
  const auto probe = single_probe({1, 0});
  CHECK(loss_laplacian(gt, gt, probe) == 0.0);
  // pred applies to (1, 0), gt to (0, 0): w = 1 / 0.1
  CHECK(loss_laplacian(diag_pair({1, 0}, {1, 1}), gt, probe) == doctest::Approx(10.0).epsilon(1e-14));

  const auto knn = build_knn(normalize_unit_box(make_shape(ShapeKind::Torus, 500, 3)).vertices, 8);
  const auto a = uniform_laplacian(knn), b = heat_kernel_laplacian(knn, default_heat_time(knn));
  Rng rng(1);
  Matrix F(knn.num_vertices(), 2);
  for (double& v : F.data) v = rng.normal();
  ProbeSet set{F, {ProbeMeta{}, ProbeMeta{}}};
  ProbeSet doubled = set;
  for (double& v : doubled.values.data) v *= 2;
  const auto r1 = laplacian_residuals(a, b, set), r2 = laplacian_residuals(a, b, doubled);
  for (std::size_t c = 0; c < 2; ++c) CHECK(r2[c] == doctest::Approx(4 * r1[c]).epsilon(1e-12));

  const auto w1 = probe_weights(apply_laplacian(b, set.values));
  const auto w2 = probe_weights(apply_laplacian(b, doubled.values));
  double direct = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(w2[c] < w1[c]);
    direct += w2[c] * r2[c];
  }
  CHECK(loss_laplacian(a, b, doubled) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(loss_laplacian(a, b, set) > 0);
  CHECK_THROWS_AS(loss_laplacian(a, diag_pair({0, 0}, {1, 1}), set), std::invalid_argument);
}

TEST_CASE("loss_mass examples") {
  const std::vector<double> p{1, 1}, g{1, 3};
  CHECK(loss_mass(p, p) == 0.0);
  CHECK(loss_mass(p, g) == 2.0);
  const std::vector<double> a{0.5, 2, 1.5, 1}, b{1, 1.25, 0.5, 3};
  const std::vector<double> pa{1.5, 0.5, 1, 2}, pb{0.5, 1, 3, 1.25};
  CHECK(loss_mass(a, b) == doctest::Approx(loss_mass(pa, pb)).epsilon(1e-15));
  CHECK_THROWS_AS(loss_mass(p, a), std::invalid_argument);
}

TEST_CASE("differentiable loss agrees with the assembled operator") {
  const auto cfg = tiny_config();
  const auto samples = small_samples(1, cfg);
  const auto& s = samples[0];
  const LaplacianModel model(cfg, 2);
  const auto probes = training_probes(s, 32, 0);
  CHECK(probes.num_probes() == 46);
  ad::Tape t(false);
  const auto out = model.forward(t, s.input);
  const auto lv = loss_terms(out, s.input, s.gt, probes);
  const auto pred = model.predict(*s.graph);
  CHECK(lv.laplacian.value()(0, 0) == doctest::Approx(loss_laplacian(pred, s.gt, probes)).epsilon(1e-10));
  CHECK(lv.mass.value()(0, 0) == doctest::Approx(loss_mass(pred.mass.values(), s.gt.mass.values())).epsilon(1e-12));
  CHECK(lv.total.value()(0, 0) ==
        doctest::Approx(lv.laplacian.value()(0, 0) + 0.1 * lv.mass.value()(0, 0)).epsilon(1e-15));
}

TEST_CASE("full loss gradient matches finite differences on a 30-point cloud") {
  const auto r = full_loss_check::run(ModelConfig::desk(), 5);
  CHECK(r.checked == LaplacianModel(ModelConfig::desk(), 0).params().size());
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("evaluate examples") {
  const auto gt = diag_pair({0, 0}, {1, 1});
  const auto probe = single_probe({1, 0});
  const auto same = evaluate(gt, gt, probe);
  CHECK(same.mse == 0.0);
  CHECK(same.r_gt1 == 0.0);

  // residual (2, 0): per-point MSE 2, clipped to 1 and counted
  const auto far = evaluate(diag_pair({2, 0}, {1, 1}), gt, probe);
  CHECK(far.probe_mse == std::vector<double>{1.0});
  CHECK(far.mse == 1.0);
  CHECK(far.exceeded == 1);
  CHECK(far.r_gt1 == 1.0);

  const auto near = evaluate(diag_pair({0.5, 0}, {1, 1}), gt, probe);
  CHECK(near.mse == 0.125);
  CHECK(near.r_gt1 == 0.0);
  const Evaluation parts[] = {far, near};
  const auto all = combine(parts);
  CHECK(all.mse == 0.5625);
  CHECK(all.r_gt1 == 0.5);

  const auto knn = build_knn(normalize_unit_box(make_shape(ShapeKind::Box, 500, 1)).vertices, 8);
  const auto a = uniform_laplacian(knn), b = heat_kernel_laplacian(knn, default_heat_time(knn));
  const auto probes = eval_probe_set(b, PointCloud{knn.positions(), {}});
  CHECK(probes.num_probes() == 112);
  const auto ab = evaluate(a, b, probes), ba = evaluate(b, a, probes);
  CHECK(ab.probe_mse == ba.probe_mse);
  CHECK(ab.sparsity == a.stiffness.mean_nonzeros_per_row());
  for (double v : ab.probe_mse) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("linear learning-rate decay") {
  CHECK(learning_rate_at(1e-3, 0, 500) == 1e-3);
  CHECK(learning_rate_at(1e-3, 499, 500) == doctest::Approx(2e-6).epsilon(1e-12));
  CHECK(learning_rate_at(1e-3, 250, 500) == doctest::Approx(5e-4).epsilon(1e-15));
}

TEST_CASE("single-sample overfit") {
  const auto cfg = ModelConfig::desk();
  const auto samples = small_samples(1, cfg);
  LaplacianModel model(cfg, 1);
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 1;
  tc.model = cfg;
  const auto result = train(model, samples, {}, tc);
  const auto& trace = result.step_losses;
  REQUIRE(trace.size() == 200);
  const double head = std::accumulate(trace.begin(), trace.begin() + 20, 0.0);
  const double tail = std::accumulate(trace.end() - 20, trace.end(), 0.0);
  MESSAGE("loss " << trace.front() << " -> " << trace.back());
  CHECK(tail < head);
  CHECK(trace.back() < 0.1 * trace.front());
}

TEST_CASE("training replays exactly under a fixed seed") {
  const auto cfg = tiny_config();
  const auto samples = small_samples(5, cfg);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.model = cfg;
  tc.seed = 9;
  auto run = [&] {
    LaplacianModel m(cfg, 4);
    auto r = train(m, std::span(samples).subspan(0, 4), std::span(samples).subspan(4), tc);
    return std::make_pair(r, m.params().get("head.edge2.W").value);
  };
  const auto [ra, wa] = run();
  const auto [rb, wb] = run();
  CHECK(ra.step_losses.size() == 6);
  CHECK(ra.step_losses == rb.step_losses);
  CHECK(wa == wb);
  CHECK(ra.epochs.back().heldout_mse >= 0.0);
  CHECK(ra.epochs.back().heldout_mse == rb.epochs.back().heldout_mse);

  tc.seed = 10;
  LaplacianModel m(cfg, 4);
  CHECK(train(m, std::span(samples).subspan(0, 4), {}, tc).step_losses != ra.step_losses);
}

TEST_CASE("training artifacts and divergence handling") {
  const auto cfg = tiny_config();
  const auto samples = small_samples(2, cfg);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.checkpoint_every = 1;
  tc.model = cfg;
  const auto dir = scratch("pclap_test_train");
  LaplacianModel model(cfg, 3);
  std::size_t callbacks = 0;
  train(model, samples, samples, tc, {dir, [&](const EpochLog&) { ++callbacks; }});
  CHECK(callbacks == 2);
  CHECK(std::filesystem::exists(dir / "checkpoints" / "epoch_0001" / "manifest.json"));
  CHECK(std::filesystem::exists(dir / "checkpoint" / "manifest.json"));
  std::ifstream log(dir / "train_log.csv");
  std::string header, line;
  std::getline(log, header);
  CHECK(header == "epoch,learning_rate,laplacian,mass,total,heldout_mse");
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  CHECK(rows == 2);
  const auto back = LaplacianModel::load(dir / "checkpoint");
  CHECK(back.predict(*samples[0].graph).stiffness.values() == model.predict(*samples[0].graph).stiffness.values());

  model.params().get("head.mass2.b").value(0, 0) = std::nan("");
  CHECK_THROWS_AS(train(model, samples, {}, tc, {dir, {}}), TrainingDiverged);
  CHECK(std::filesystem::exists(dir / "divergence.json"));

  tc.model.feature_dim = 16;
  CHECK_THROWS_AS(train(model, samples, {}, tc), std::invalid_argument);
}

TEST_CASE("ini parsing") {
  const auto ini = IniFile::parse("top = 1\n# comment\n[train]\nepochs = 12 ; trailing\nlr=0.5\n\n[model]\nblocks = 1, 2,3\n");
  CHECK(ini.get_int("", "top", 0) == 1);
  CHECK(ini.get_int("train", "epochs", 0) == 12);
  CHECK(ini.get_double("train", "lr", 0) == 0.5);
  CHECK(ini.get_list("model", "blocks", {}) == std::vector<std::string>{"1", "2", "3"});
  CHECK(ini.get_int("train", "missing", 7) == 7);
  CHECK_NOTHROW(ini.reject_unused());

  const auto partial = IniFile::parse("[train]\nepochs = 3\ntypo = 1\n");
  partial.get_int("train", "epochs", 0);
  CHECK_THROWS_WITH_AS(partial.reject_unused(), "config: unknown key train.typo", std::invalid_argument);
  CHECK_THROWS_AS(IniFile::parse("[train\n"), ParseError);
  CHECK_THROWS_AS(IniFile::parse("[a]\nnovalue\n"), ParseError);
  CHECK_THROWS_AS(IniFile::parse("[a]\nx = 1\nx = 2\n"), ParseError);
  CHECK_THROWS_AS(IniFile::parse("[train]\nepochs = ten\n").get_int("train", "epochs", 0), std::invalid_argument);
}

TEST_CASE("train and dataset configs round-trip through ini") {
  TrainConfig tc;
  tc.epochs = 7;
  tc.learning_rate = 3e-4;
  tc.model.blocks = {1, 2, 3};
  DatasetConfig dc;
  dc.num_shapes = 12;
  dc.kinds = {ShapeKind::Torus, ShapeKind::BlendedBlob};
  IniFile ini;
  tc.to_ini(ini);
  dc.to_ini(ini);
  const auto parsed = IniFile::parse(ini.dump());
  const auto tc2 = TrainConfig::from_ini(parsed);
  const auto dc2 = DatasetConfig::from_ini(parsed);
  CHECK_NOTHROW(parsed.reject_unused());
  CHECK(tc2.to_json() == tc.to_json());
  CHECK(dc2.to_json() == dc.to_json());
  CHECK(TrainConfig::from_ini(IniFile::parse("[train]\npaper_scale = true\n")).to_json() == TrainConfig::paper().to_json());
  CHECK(TrainConfig::paper().batch_size == 8);
  CHECK(TrainConfig::paper().epochs == 500);
}

TEST_CASE("dataset planning, storage and validation") {
  DatasetConfig dc;
  dc.num_shapes = 10;
  dc.max_resolution = 520;
  const auto plan = plan_dataset(dc);
  CHECK(plan == plan_dataset(dc));
  CHECK(std::count_if(plan.begin(), plan.end(), [](const ShapeSpec& s) { return s.train; }) == 8);
  CHECK(plan[0].kind == ShapeKind::Sphere);
  CHECK(plan[7].kind == ShapeKind::Torus);
  for (const auto& s : plan) CHECK((s.resolution >= 500 && s.resolution <= 520));

  const auto dir = scratch("pclap_test_dataset");
  const Dataset ds = generate_dataset(dc);
  save_dataset(ds, dir);
  std::size_t subdirs = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) {
      ++subdirs;
      for (const char* f : {"mesh.obj", "cloud.ply", "gt.mtx", "gt.mass.txt", "probes.bin"})
        CHECK(std::filesystem::exists(e.path() / f));
    }
  CHECK(subdirs == 10);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.shapes.size() == 10);
  CHECK(back.config.to_json() == dc.to_json());
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(back.shapes[i].spec == ds.shapes[i].spec);
    CHECK(back.shapes[i].gt.stiffness.values() == ds.shapes[i].gt.stiffness.values());
    CHECK(back.shapes[i].spectral == ds.shapes[i].spectral);
    CHECK(back.shapes[i].mesh.vertices == ds.shapes[i].mesh.vertices);
  }
  CHECK(back.split(true).size() == 8);
  CHECK(back.split(false).size() == 2);

  // Corrupt one ground-truth value; the row-sum check on load must catch it.
  const auto& victim = ds.shapes[3];
  LaplacianPair bad = victim.gt;
  bad.stiffness.values()[0] += 0.25;
  save_laplacian(bad, dir / victim.spec.name / "gt");
  CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("does not sum to zero"), std::runtime_error);
}
