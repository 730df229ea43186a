#include "pclap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pclap/parallel.hpp"
#include "pclap/random.hpp"

namespace pclap {

using nlohmann::ordered_json;

void DatasetConfig::validate() const {
  if (num_shapes == 0) throw std::invalid_argument("dataset: num_shapes must be positive");
  if (min_resolution < 500 || max_resolution > 5000 || min_resolution > max_resolution)
    throw std::invalid_argument("dataset: resolutions must satisfy 500 <= min <= max <= 5000");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw std::invalid_argument("dataset: train_fraction must be in (0, 1]");
  if (kinds.empty()) throw std::invalid_argument("dataset: no shape kinds");
}

DatasetConfig DatasetConfig::from_ini(const IniFile& ini) {
  DatasetConfig c;
  c.num_shapes = static_cast<std::size_t>(ini.get_int("dataset", "num_shapes", static_cast<std::int64_t>(c.num_shapes)));
  c.min_resolution = static_cast<int>(ini.get_int("dataset", "min_resolution", c.min_resolution));
  c.max_resolution = static_cast<int>(ini.get_int("dataset", "max_resolution", c.max_resolution));
  c.train_fraction = ini.get_double("dataset", "train_fraction", c.train_fraction);
  c.seed = static_cast<std::uint64_t>(ini.get_int("dataset", "seed", static_cast<std::int64_t>(c.seed)));
  if (const auto kinds = ini.get_list("dataset", "kinds", {}); !kinds.empty()) {
    c.kinds.clear();
    for (const auto& k : kinds) c.kinds.push_back(parse_shape_kind(k));
  }
  c.validate();
  return c;
}

void DatasetConfig::to_ini(IniFile& ini) const {
  ini.set("dataset", "num_shapes", std::to_string(num_shapes));
  ini.set("dataset", "min_resolution", std::to_string(min_resolution));
  ini.set("dataset", "max_resolution", std::to_string(max_resolution));
  std::ostringstream frac;
  frac << train_fraction;
  ini.set("dataset", "train_fraction", frac.str());
  ini.set("dataset", "seed", std::to_string(seed));
  std::string list;
  for (ShapeKind k : kinds) list += (list.empty() ? "" : ", ") + std::string(shape_kind_name(k));
  ini.set("dataset", "kinds", list);
}

std::string DatasetConfig::to_json() const {
  ordered_json j;
  j["num_shapes"] = num_shapes;
  j["min_resolution"] = min_resolution;
  j["max_resolution"] = max_resolution;
  j["train_fraction"] = train_fraction;
  j["seed"] = seed;
  auto& k = j["kinds"] = ordered_json::array();
  for (ShapeKind kind : kinds) k.push_back(std::string(shape_kind_name(kind)));
  return j.dump();
}

DatasetConfig DatasetConfig::from_json(const std::string& json) {
  const auto j = ordered_json::parse(json);
  DatasetConfig c;
  c.num_shapes = j.at("num_shapes");
  c.min_resolution = j.at("min_resolution");
  c.max_resolution = j.at("max_resolution");
  c.train_fraction = j.at("train_fraction");
  c.seed = j.at("seed");
  c.kinds.clear();
  for (const auto& k : j.at("kinds")) c.kinds.push_back(parse_shape_kind(k.get<std::string>()));
  c.validate();
  return c;
}

std::vector<ShapeSpec> plan_dataset(const DatasetConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0xDA7A));
  std::vector<ShapeSpec> specs(config.num_shapes);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& s = specs[i];
    s.kind = config.kinds[i % config.kinds.size()];
    const int span = config.max_resolution - config.min_resolution + 1;
    s.resolution = config.min_resolution + static_cast<int>(rng.index(static_cast<std::size_t>(span)));
    s.seed = mix_seed(config.seed, i);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%04zu", std::string(shape_kind_name(s.kind)).c_str(), i);
    s.name = name;
  }
  std::vector<std::size_t> order(specs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(mix_seed(config.seed, 0x5917));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.index(i)]);
  const auto train_count = static_cast<std::size_t>(std::llround(config.train_fraction * specs.size()));
  for (std::size_t q = 0; q < order.size(); ++q) specs[order[q]].train = q < train_count;
  return specs;
}

ShapeRecord generate_shape(const ShapeSpec& spec) {
  ShapeRecord r;
  r.spec = spec;
  r.mesh = normalize_unit_box(make_shape(spec.kind, spec.resolution, spec.seed));
  r.gt = cotangent_laplacian(r.mesh);
  r.spectral = spectral_probes(r.gt, kSpectralProbeCount, spec.seed);
  return r;
}

void save_shape(const ShapeRecord& record, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_obj(record.mesh, dir / "mesh.obj");
  save_point_cloud(record.cloud(), dir / "cloud.ply");
  save_laplacian(record.gt, dir / "gt");
  save_probes(record.spectral, dir / "probes.bin");
}

ShapeRecord load_shape(const std::filesystem::path& dir, const ShapeSpec& spec) {
  ShapeRecord r;
  r.spec = spec;
  r.mesh = load_obj(dir / "mesh.obj");
  r.gt = load_laplacian(dir / "gt");
  r.spectral = load_probes(dir / "probes.bin");
  const std::size_t n = r.mesh.num_vertices();
  if (r.gt.size() != n || r.spectral.num_vertices() != n)
    throw std::runtime_error("dataset: " + dir.string() + " has inconsistent vertex counts");
  const auto sums = r.gt.stiffness.row_sums();
  const double tol = 1e-9 * r.gt.stiffness.norm_inf();
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(sums[i]) > tol)
      throw std::runtime_error("dataset: " + dir.string() + " ground truth row " + std::to_string(i) +
                               " does not sum to zero");
  return r;
}

std::vector<const ShapeRecord*> Dataset::split(bool train) const {
  std::vector<const ShapeRecord*> out;
  for (const auto& s : shapes)
    if (s.spec.train == train) out.push_back(&s);
  return out;
}

Dataset generate_dataset(const DatasetConfig& config) {
  const auto specs = plan_dataset(config);
  Dataset d{config, std::vector<ShapeRecord>(specs.size())};
  parallel_for(specs.size(), [&](std::size_t i) { d.shapes[i] = generate_shape(specs[i]); });
  return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json index;
  index["format"] = "pclap-dataset";
  index["config"] = ordered_json::parse(dataset.config.to_json());
  auto& shapes = index["shapes"] = ordered_json::array();
  for (const auto& s : dataset.shapes) {
    save_shape(s, dir / s.spec.name);
    shapes.push_back({{"name", s.spec.name},
                      {"kind", std::string(shape_kind_name(s.spec.kind))},
                      {"resolution", s.spec.resolution},
                      {"seed", s.spec.seed},
                      {"split", s.spec.train ? "train" : "heldout"}});
  }
  std::ofstream out(dir / "index.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "index.json").string());
  const auto index = ordered_json::parse(in);
  if (index.value("format", "") != "pclap-dataset") throw std::runtime_error("not a dataset index: " + dir.string());
  Dataset d;
  d.config = DatasetConfig::from_json(index.at("config").dump());
  std::vector<ShapeSpec> specs;
  for (const auto& s : index.at("shapes"))
    specs.push_back({s.at("name"), parse_shape_kind(s.at("kind").get<std::string>()), s.at("resolution"),
                     s.at("seed"), s.at("split") == "train"});
  d.shapes.resize(specs.size());
  parallel_for(specs.size(), [&](std::size_t i) { d.shapes[i] = load_shape(dir / specs[i].name, specs[i]); });
  return d;
}

}  // namespace pclap
