// pclap: dataset generation, training, prediction, evaluation and
// applications of learned point-cloud Laplacians.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pclap/apps.hpp"
#include "pclap/parallel.hpp"
#include "pclap/training.hpp"

namespace fs = std::filesystem;
using namespace pclap;
using nlohmann::ordered_json;

#ifndef PCLAP_VERSION
#define PCLAP_VERSION "unknown"
#endif

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string out = "out";
  std::size_t threads = 0;
  bool paper_scale = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_given = true; }, "random seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  cmd->add_flag("--paper-scale", c.paper_scale, "full-size hyperparameters");
}

IniFile load_config(const Common& c) { return c.config.empty() ? IniFile{} : IniFile::load(c.config); }

class Manifest {
 public:
  Manifest(std::string command, const Common& c) : command_(std::move(command)), common_(c) {
    start_ = std::chrono::steady_clock::now();
  }
  void config(const IniFile& effective) { config_ = effective.dump(); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void set(const std::string& key, ordered_json value) { extra_[key] = std::move(value); }

  // Written to a temporary name and renamed into place.
  void write(const fs::path& dir) const {
    ordered_json j;
    j["command"] = command_;
    j["version"] = PCLAP_VERSION;
    j["seed"] = common_.seed;
    j["threads"] = common_.threads;
    j["paper_scale"] = common_.paper_scale;
    j["config"] = config_;
    j["outputs"] = outputs_;
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    j["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    fs::create_directories(dir);
    const fs::path tmp = dir / "run_manifest.json.tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw std::runtime_error("cannot write " + tmp.string());
      out << j.dump(2) << '\n';
    }
    fs::rename(tmp, dir / "run_manifest.json");
  }

 private:
  std::string command_;
  Common common_;
  std::string config_;
  std::vector<std::string> outputs_;
  ordered_json extra_ = ordered_json::object();
  std::chrono::steady_clock::time_point start_;
};

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// ---- gen ----

int cmd_gen(const Common& c, std::optional<std::size_t> num_shapes) {
  IniFile ini = load_config(c);
  DatasetConfig dc = DatasetConfig::from_ini(ini);
  TrainConfig::from_ini(ini);  // shared config files may carry [train] and [model] sections
  ini.reject_unused();
  if (c.paper_scale) {
    dc.min_resolution = 4500;
    dc.max_resolution = 5000;
  }
  if (c.seed_given) dc.seed = c.seed;
  if (num_shapes) dc.num_shapes = *num_shapes;
  dc.validate();

  Manifest m("gen", c);
  IniFile effective;
  dc.to_ini(effective);
  m.config(effective);
  const fs::path out = c.out;
  const Dataset ds = generate_dataset(dc);
  save_dataset(ds, out);
  const Dataset check = load_dataset(out);
  if (check.shapes.size() != ds.shapes.size()) throw std::runtime_error("gen: dataset reload mismatch");
  m.output(out / "index.json");
  m.set("shapes", ds.shapes.size());
  m.write(out);
  std::cout << "wrote " << ds.shapes.size() << " shapes to " << out.string() << "\n";
  return 0;
}

// ---- train ----

int cmd_train(const Common& c, const std::string& dataset_dir, std::optional<std::size_t> epochs) {
  IniFile ini = load_config(c);
  if (c.paper_scale) ini.set("train", "paper_scale", "true");
  TrainConfig tc = TrainConfig::from_ini(ini);
  ini.get_bool("train", "paper_scale", false);
  DatasetConfig::from_ini(ini);  // shared config files may carry a [dataset] section
  ini.reject_unused();
  if (c.seed_given) tc.seed = c.seed;
  if (epochs) tc.epochs = *epochs;
  tc.validate();

  Manifest m("train", c);
  IniFile effective;
  tc.to_ini(effective);
  m.config(effective);
  m.set("dataset", dataset_dir);

  const Dataset ds = load_dataset(dataset_dir);
  const auto train_records = ds.split(true), held_records = ds.split(false);
  const auto train_set = make_training_samples(train_records, tc.model);
  const auto heldout = make_training_samples(held_records, tc.model);
  LaplacianModel model(tc.model, tc.seed);
  const fs::path out = c.out;
  const auto result = train(model, train_set, heldout, tc, {out, [](const EpochLog& e) {
                                                              std::cout << "epoch " << e.epoch << " loss " << e.total;
                                                              if (e.heldout_mse >= 0)
                                                                std::cout << " heldout_mse " << e.heldout_mse;
                                                              std::cout << " (" << e.seconds << " s)\n";
                                                            }});
  const auto reloaded = LaplacianModel::load(out / "checkpoint");
  if (!(reloaded.config() == tc.model)) throw std::runtime_error("train: checkpoint reload mismatch");
  m.output(out / "checkpoint");
  m.output(out / "train_log.csv");
  m.set("final_loss", result.epochs.back().total);
  m.write(out);
  return 0;
}

// ---- operators ----

struct Input {
  std::optional<Mesh> mesh;
  PointCloud cloud;
};

Input load_input(const std::string& path) {
  Input in;
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".obj" || ext == ".ply") {
    Mesh mesh = load_mesh(path);
    in.cloud.points = mesh.vertices;
    if (!mesh.triangles.empty()) in.mesh = std::move(mesh);
  } else {
    in.cloud = load_point_cloud(path);
  }
  return in;
}

LaplacianPair make_operator(const std::string& name, const Input& in, const KnnGraph& graph,
                            const std::string& checkpoint) {
  if (name == "cotangent") {
    if (!in.mesh) throw std::invalid_argument("the cotangent operator needs a triangle mesh input");
    return cotangent_laplacian(*in.mesh);
  }
  switch (parse_source(name)) {
    case LaplacianSource::Uniform: return uniform_laplacian(graph);
    case LaplacianSource::HeatKernel: return heat_kernel_laplacian(graph, default_heat_time(graph));
    case LaplacianSource::Learned:
      if (checkpoint.empty()) throw std::invalid_argument("the learned operator needs --checkpoint");
      return LaplacianModel::load(checkpoint).predict(graph);
    default: throw std::invalid_argument("unsupported operator " + name);
  }
}

// ---- predict ----

int cmd_predict(const Common& c, const std::string& checkpoint, const std::string& input) {
  Manifest m("predict", c);
  const auto model = LaplacianModel::load(checkpoint);
  const Input in = load_input(input);
  const KnnGraph graph = build_knn(in.cloud, model.config().k);
  const LaplacianPair pair = model.predict(graph);
  const fs::path out = c.out;
  fs::create_directories(out);
  save_laplacian(pair, out / "laplacian");
  const LaplacianPair back = load_laplacian(out / "laplacian");
  if (back.stiffness.max_asymmetry() != 0.0) throw std::runtime_error("predict: reloaded stiffness is not symmetric");
  if (back.size() != in.cloud.size()) throw std::runtime_error("predict: reloaded size mismatch");
  m.set("checkpoint", checkpoint);
  m.set("input", input);
  m.output(out / "laplacian.mtx");
  m.output(out / "laplacian.mass.txt");
  m.write(out);
  std::cout << "sparsity " << pair.stiffness.mean_nonzeros_per_row() << "\n";
  return 0;
}

// ---- eval ----

int cmd_eval(const Common& c, const std::string& dataset_dir, const std::string& checkpoint,
             const std::string& baseline, const std::string& split) {
  if (checkpoint.empty() == baseline.empty()) throw std::invalid_argument("eval: give exactly one of --checkpoint or --baseline");
  Manifest m("eval", c);
  const Dataset ds = load_dataset(dataset_dir);
  std::vector<const ShapeRecord*> records;
  for (const auto& s : ds.shapes)
    if (split == "all" || (split == "train") == s.spec.train) records.push_back(&s);
  if (records.empty()) throw std::runtime_error("eval: no shapes in split " + split);

  std::optional<LaplacianModel> model;
  if (!checkpoint.empty()) model.emplace(LaplacianModel::load(checkpoint));
  const std::size_t k = model ? model->config().k : 8;
  std::vector<Evaluation> evals(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const ShapeRecord& r = *records[i];
    const PointCloud cloud = r.cloud();
    const KnnGraph graph = build_knn(cloud, k);
    const LaplacianPair pred = model ? model->predict(graph) : make_operator(baseline, {r.mesh, cloud}, graph, "");
    ProbeSet probes = r.spectral;
    probes.append(eval_fixed_probes(cloud));
    evals[i] = evaluate(pred, r.gt, probes);
  });

  const fs::path out = c.out;
  fs::create_directories(out);
  std::ofstream csv(out / "metrics.csv");
  if (!csv) throw std::runtime_error("cannot write metrics.csv");
  csv << "category,name,mse,r_gt1,sparsity\n";
  auto row = [&](const std::string& cat, const std::string& name, const Evaluation& e) {
    csv << cat << ',' << name << ',' << fmt(e.mse) << ',' << fmt(e.r_gt1) << ',' << fmt(e.sparsity) << '\n';
  };
  std::map<std::string, std::vector<Evaluation>> by_category;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string cat(shape_kind_name(records[i]->spec.kind));
    row(cat, records[i]->spec.name, evals[i]);
    by_category[cat].push_back(evals[i]);
  }
  for (const auto& [cat, list] : by_category) row(cat, "all", combine(list));
  const Evaluation total = combine(evals);
  row("total", "all", total);
  csv.close();

  std::ifstream check(out / "metrics.csv");
  std::size_t lines = 0;
  for (std::string line; std::getline(check, line);) ++lines;
  if (lines != 2 + records.size() + by_category.size()) throw std::runtime_error("eval: metrics.csv incomplete");

  m.set("dataset", dataset_dir);
  m.set("operator", model ? "learned:" + checkpoint : baseline);
  m.set("split", split);
  m.output(out / "metrics.csv");
  m.write(out);
  std::cout << "total mse " << total.mse << " r_gt1 " << total.r_gt1 << " sparsity " << total.sparsity << "\n";
  return 0;
}

// ---- app ----

struct AppArgs {
  std::string input, op = "heat-kernel", checkpoint;
  std::size_t source = 0, steps = 1000, iters = 10, modes = 20;
  double dt = 1e-3, step = 0.5, gain = 0.0;
  bool implicit = false, keep = false;
  std::string axis = "x";
  double fixed_below = -0.8, handle_above = 0.8;
  std::vector<double> offset{0.0, 0.5, 0.0};
};

void write_field(const fs::path& out, const std::string& stem, const Input& in, std::span<const double> f,
                 Manifest& m) {
  fs::create_directories(out);
  std::ofstream csv(out / (stem + ".csv"));
  csv << "vertex," << stem << "\n";
  for (std::size_t i = 0; i < f.size(); ++i) csv << i << ',' << fmt(f[i]) << '\n';
  const auto colors = colorize(f);
  const std::vector<Triangle> none;
  save_ply(out / (stem + ".ply"), in.cloud.points, in.mesh ? std::span<const Triangle>(in.mesh->triangles) : none,
           colors);
  m.output(out / (stem + ".csv"));
  m.output(out / (stem + ".ply"));
}

void write_points(const fs::path& out, const std::string& stem, const Input& in, std::span<const Vec3> pts,
                  Manifest& m) {
  fs::create_directories(out);
  const std::vector<Triangle> none;
  save_ply(out / (stem + ".ply"), pts, in.mesh ? std::span<const Triangle>(in.mesh->triangles) : none);
  m.output(out / (stem + ".ply"));
}

int cmd_app(const Common& c, const std::string& which, const AppArgs& a) {
  Manifest m("app " + which, c);
  const Input in = load_input(a.input);
  const KnnGraph graph = build_knn(in.cloud, 8);
  const LaplacianPair pair = make_operator(a.op, in, graph, a.checkpoint);
  const fs::path out = c.out;
  m.set("input", a.input);
  m.set("operator", a.op);

  if (which == "heat") {
    if (a.source >= pair.size()) throw std::out_of_range("app heat: source out of range");
    std::vector<double> u0(pair.size(), 0.0);
    u0[a.source] = 1.0 / pair.mass[a.source];
    const auto r = heat_diffuse(pair, u0, {.dt = a.dt, .steps = a.steps, .implicit = a.implicit});
    if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
    write_field(out, "heat", in, r.u, m);
    m.set("mass_drift", mass_weighted_sum(pair, r.u) - mass_weighted_sum(pair, u0));
  } else if (which == "geodesic") {
    if (!in.mesh) throw std::invalid_argument("app geodesic: needs a triangle mesh input");
    write_field(out, "distance", in, geodesic_heat(*in.mesh, pair, a.source), m);
  } else if (which == "smooth") {
    write_points(out, "smoothed", in, laplacian_smooth(in.cloud.points, pair, a.step, a.iters), m);
  } else if (which == "filter") {
    const double g = a.gain;
    const std::size_t modes = a.modes;
    const auto filtered =
        spectral_filter(pair, positions_matrix(in.cloud.points), [g](std::size_t, double) { return g; }, modes,
                        a.keep ? ResidualPolicy::Keep : ResidualPolicy::Drop, c.seed);
    write_points(out, "filtered", in, matrix_positions(filtered), m);
  } else if (which == "arap") {
    const int ax = a.axis == "x" ? 0 : a.axis == "y" ? 1 : a.axis == "z" ? 2 : -1;
    if (ax < 0) throw std::invalid_argument("app arap: --axis must be x, y or z");
    if (a.offset.size() != 3) throw std::invalid_argument("app arap: --offset needs three values");
    DeformationConstraints dc;
    const Vec3 off{a.offset[0], a.offset[1], a.offset[2]};
    const auto& p = in.cloud.points;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i][ax] <= a.fixed_below) {
        dc.fixed.push_back(i);
        dc.fixed_targets.push_back(p[i]);
      } else if (p[i][ax] >= a.handle_above) {
        dc.handles.push_back(i);
        dc.handle_targets.push_back(p[i] + off);
      }
    }
    const auto r = arap_deform(p, graph, pair, dc, a.iters);
    write_points(out, "deformed", in, r.positions, m);
    m.set("energies", r.energies);
  } else {
    throw std::invalid_argument("unknown app " + which);
  }
  m.write(out);
  return 0;
}

// ---- shape ----

int cmd_shape(const Common& c, const std::string& kind, int resolution, int grid) {
  Manifest m("shape", c);
  const Mesh mesh = grid > 0 ? make_plane_grid(grid, grid)
                             : normalize_unit_box(make_shape(parse_shape_kind(kind), resolution, c.seed));
  const fs::path out = c.out;
  fs::create_directories(out);
  save_obj(mesh, out / "shape.obj");
  m.output(out / "shape.obj");
  m.write(out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned point-cloud Laplacians"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PCLAP_VERSION);

  Common common;
  std::optional<std::size_t> num_shapes, epochs;
  std::string dataset, checkpoint, baseline, input, split = "heldout", kind = "sphere";
  int resolution = 1000, grid = 0;
  AppArgs app_args;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset with ground truth");
  add_common(gen, common);
  gen->add_option("--num-shapes", num_shapes, "override the number of shapes");

  auto* tr = app.add_subcommand("train", "train the operator network");
  add_common(tr, common);
  tr->add_option("--dataset", dataset, "dataset directory")->required();
  tr->add_option("--epochs", epochs, "override the epoch count");

  auto* pr = app.add_subcommand("predict", "predict L and M for a point cloud");
  add_common(pr, common);
  pr->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  pr->add_option("--input", input, "point cloud or mesh (.ply, .obj, .xyz)")->required()->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or baseline on a dataset");
  add_common(ev, common);
  ev->add_option("--dataset", dataset, "dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint, "checkpoint directory");
  ev->add_option("--baseline", baseline, "uniform or heat-kernel");
  ev->add_option("--split", split, "heldout, train or all")->check(CLI::IsMember({"heldout", "train", "all"}));

  auto* ap = app.add_subcommand("app", "run an application");
  ap->require_subcommand(1);
  std::string which;
  for (const char* name : {"heat", "geodesic", "smooth", "filter", "arap"}) {
    auto* sub = ap->add_subcommand(name);
    add_common(sub, common);
    sub->add_option("--input", app_args.input, "mesh or point cloud")->required()->check(CLI::ExistingFile);
    sub->add_option("--operator", app_args.op, "cotangent, uniform, heat-kernel or learned");
    sub->add_option("--checkpoint", app_args.checkpoint, "checkpoint for the learned operator");
    sub->callback([&which, name] { which = name; });
    const std::string n = name;
    if (n == "heat" || n == "geodesic") sub->add_option("--source", app_args.source, "source vertex");
    if (n == "heat") {
      sub->add_option("--dt", app_args.dt, "time step");
      sub->add_option("--steps", app_args.steps, "number of steps");
      sub->add_flag("--implicit", app_args.implicit, "backward Euler");
    }
    if (n == "smooth") {
      sub->add_option("--step", app_args.step, "step size in (0, 1]");
      sub->add_option("--iters", app_args.iters, "iterations");
    }
    if (n == "filter") {
      sub->add_option("--modes", app_args.modes, "number of eigenmodes");
      sub->add_option("--gain", app_args.gain, "gain applied to the retained modes");
      sub->add_flag("--keep", app_args.keep, "keep the residual above the retained modes");
    }
    if (n == "arap") {
      sub->add_option("--iters", app_args.iters, "iterations");
      sub->add_option("--axis", app_args.axis, "constraint axis");
      sub->add_option("--fixed-below", app_args.fixed_below, "fix vertices at or below this coordinate");
      sub->add_option("--handle-above", app_args.handle_above, "move vertices at or above this coordinate");
      sub->add_option("--offset", app_args.offset, "handle displacement")->expected(3);
    }
  }

  auto* sh = app.add_subcommand("shape", "write one procedural mesh");
  add_common(sh, common);
  sh->add_option("--kind", kind, "sphere, torus, box, plane, cylinder or blended-blob");
  sh->add_option("--resolution", resolution, "approximate vertex count");
  sh->add_option("--grid", grid, "write an N x N flat grid instead");

  CLI11_PARSE(app, argc, argv);

  try {
    set_num_threads(common.threads);
    if (gen->parsed()) return cmd_gen(common, num_shapes);
    if (tr->parsed()) return cmd_train(common, dataset, epochs);
    if (pr->parsed()) return cmd_predict(common, checkpoint, input);
    if (ev->parsed()) return cmd_eval(common, dataset, checkpoint, baseline, split);
    if (ap->parsed()) return cmd_app(common, which, app_args);
    if (sh->parsed()) return cmd_shape(common, kind, resolution, grid);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
