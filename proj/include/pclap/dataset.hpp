#pragma once

// Synthetic shape collections with precomputed cotangent ground truth and
// spectral probes, stored one directory per shape.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pclap/geometry.hpp"
#include "pclap/ini.hpp"
#include "pclap/laplacian.hpp"
#include "pclap/probes.hpp"

namespace pclap {

struct DatasetConfig {
  std::size_t num_shapes = 200;
  int min_resolution = 500;
  int max_resolution = 700;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;
  std::vector<ShapeKind> kinds{ShapeKind::Sphere, ShapeKind::Torus,    ShapeKind::Box,
                               ShapeKind::Plane,  ShapeKind::Cylinder, ShapeKind::BlendedBlob};

  void validate() const;
  static DatasetConfig from_ini(const IniFile& ini);
  void to_ini(IniFile& ini) const;
  std::string to_json() const;
  static DatasetConfig from_json(const std::string& json);
};

struct ShapeSpec {
  std::string name;
  ShapeKind kind = ShapeKind::Sphere;
  int resolution = 500;
  std::uint64_t seed = 0;
  bool train = true;
  friend bool operator==(const ShapeSpec&, const ShapeSpec&) = default;
};

// Kinds cycle in order; resolutions and seeds are drawn from the config
// seed; the train/held-out split is a seeded shuffle.
std::vector<ShapeSpec> plan_dataset(const DatasetConfig& config);

struct ShapeRecord {
  ShapeSpec spec;
  Mesh mesh;  // normalized to the unit box
  LaplacianPair gt;
  ProbeSet spectral;  // kSpectralProbeCount columns

  PointCloud cloud() const { return points_from_mesh(mesh); }
};

ShapeRecord generate_shape(const ShapeSpec& spec);

// <dir>/mesh.obj, cloud.ply, gt.{mtx,mass.txt,json}, probes.bin
void save_shape(const ShapeRecord& record, const std::filesystem::path& dir);
// Verifies the stored operator has zero row sums and matches the mesh size.
ShapeRecord load_shape(const std::filesystem::path& dir, const ShapeSpec& spec);

struct Dataset {
  DatasetConfig config;
  std::vector<ShapeRecord> shapes;

  std::vector<const ShapeRecord*> split(bool train) const;
};

Dataset generate_dataset(const DatasetConfig& config);
// Writes <dir>/index.json and one subdirectory per shape.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace pclap
