#pragma once

// Mesh and point-cloud value types, OBJ/PLY IO, normalization and the
// procedural shape family used to build training data.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pclap/vec3.hpp"

namespace pclap {

using Triangle = std::array<std::size_t, 3>;

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_triangles() const { return triangles.size(); }
};

struct PointCloud {
  std::vector<Vec3> points;
  // Set when the points are the vertices of a mesh, in the same order.
  std::optional<std::string> source_mesh;

  std::size_t size() const { return points.size(); }
};

// Raised for malformed input files; `offset` is a line number for text formats
// and a byte offset for binary payloads.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// ---- IO ----

Mesh load_mesh(const std::filesystem::path& path);
Mesh load_obj(const std::filesystem::path& path);
Mesh load_ply(const std::filesystem::path& path);
Mesh parse_obj(std::string_view text);

void save_obj(const Mesh& mesh, const std::filesystem::path& path);

enum class PlyFormat { Ascii, BinaryLittleEndian };

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Writes positions and optional faces / per-vertex colors.
void save_ply(const std::filesystem::path& path, std::span<const Vec3> vertices,
              std::span<const Triangle> triangles = {}, std::span<const Rgb> colors = {},
              PlyFormat format = PlyFormat::Ascii);

PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

// Maps values through a fixed 256-entry viridis-style table. The range
// defaults to [min, max] of the values.
Rgb colormap(double t);
std::vector<Rgb> colorize(std::span<const double> values, std::optional<double> lo = {},
                          std::optional<double> hi = {});

// ---- transforms / queries ----

struct Aabb {
  Vec3 lo, hi;
};
Aabb bounding_box(std::span<const Vec3> pts);

// Centers at the bounding-box center and scales uniformly so the longest
// extent becomes 2.
Mesh normalize_unit_box(const Mesh& mesh);
std::vector<Vec3> normalize_unit_box(std::span<const Vec3> pts);

PointCloud points_from_mesh(const Mesh& mesh);

void validate_mesh(const Mesh& mesh);
double triangle_area(const Mesh& mesh, std::size_t t);
std::size_t count_edges(const Mesh& mesh);
long euler_characteristic(const Mesh& mesh);
// Every undirected edge borders at most two faces, with opposite directions.
bool is_consistently_oriented(const Mesh& mesh);
// Edges bordering exactly one face.
std::size_t count_boundary_edges(const Mesh& mesh);
std::vector<bool> boundary_vertices(const Mesh& mesh);
double mean_edge_length(const Mesh& mesh);

// ---- procedural shapes ----

enum class ShapeKind { Sphere, Torus, Box, Plane, Cylinder, BlendedBlob };

ShapeKind parse_shape_kind(std::string_view name);
std::string_view shape_kind_name(ShapeKind kind);

// `resolution` is the approximate vertex count, 500..5000. Deterministic for
// a given (kind, resolution, seed).
Mesh make_shape(ShapeKind kind, int resolution, std::uint64_t seed);

// Lower level generators without the resolution window.
Mesh make_icosphere(int frequency);  // 10 f^2 + 2 vertices on the unit sphere
Mesh make_plane_grid(int nx, int ny, double half_extent = 1.0);
Mesh make_torus(int nu, int nv, double major_radius, double minor_radius);
Mesh make_box(const Vec3& dims, double spacing);
Mesh make_cylinder(double radius, double height, double spacing);

}  // namespace pclap
