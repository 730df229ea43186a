#include <algorithm>
#include <limits>
#include <map>
#include <utility>

#include "pclap/geometry.hpp"

namespace pclap {

Aabb bounding_box(std::span<const Vec3> pts) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Aabb box{{inf, inf, inf}, {-inf, -inf, -inf}};
  for (const Vec3& p : pts) {
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = std::min(box.lo[a], p[a]);
      box.hi[a] = std::max(box.hi[a], p[a]);
    }
  }
  return box;
}

std::vector<Vec3> normalize_unit_box(std::span<const Vec3> pts) {
  if (pts.empty()) throw std::invalid_argument("normalize_unit_box: no vertices");
  const Aabb box = bounding_box(pts);
  const Vec3 extent = box.hi - box.lo;
  const double longest = std::max({extent.x, extent.y, extent.z});
  if (!(longest > 0.0) || !std::isfinite(longest))
    throw std::invalid_argument("normalize_unit_box: degenerate bounding box");
  const Vec3 center = (box.lo + box.hi) * 0.5;
  const double scale = 2.0 / longest;
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const Vec3& p : pts) out.push_back((p - center) * scale);
  return out;
}

Mesh normalize_unit_box(const Mesh& mesh) {
  Mesh out;
  out.vertices = normalize_unit_box(std::span<const Vec3>(mesh.vertices));
  out.triangles = mesh.triangles;
  return out;
}

PointCloud points_from_mesh(const Mesh& mesh) {
  PointCloud cloud;
  cloud.points = mesh.vertices;
  cloud.source_mesh = "mesh";
  return cloud;
}

double triangle_area(const Mesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  const Vec3& a = mesh.vertices[tri[0]];
  const Vec3& b = mesh.vertices[tri[1]];
  const Vec3& c = mesh.vertices[tri[2]];
  return 0.5 * norm(cross(b - a, c - a));
}

void validate_mesh(const Mesh& mesh) {
  const std::size_t n = mesh.vertices.size();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    for (std::size_t v : mesh.triangles[t]) {
      if (v >= n)
        throw std::out_of_range("triangle " + std::to_string(t) + " references vertex " +
                                std::to_string(v) + " of " + std::to_string(n));
    }
  }
  for (const Vec3& p : mesh.vertices) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::invalid_argument("mesh has non-finite vertex coordinates");
  }
}

namespace {

using EdgeKey = std::pair<std::size_t, std::size_t>;

EdgeKey undirected(std::size_t a, std::size_t b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

// Per undirected edge: number of incident faces and net direction count.
std::map<EdgeKey, std::pair<int, int>> edge_table(const Mesh& mesh) {
  std::map<EdgeKey, std::pair<int, int>> table;
  for (const auto& tri : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      const std::size_t a = tri[k];
      const std::size_t b = tri[(k + 1) % 3];
      auto& entry = table[undirected(a, b)];
      entry.first += 1;
      entry.second += a < b ? 1 : -1;
    }
  }
  return table;
}

}  // namespace

std::size_t count_edges(const Mesh& mesh) { return edge_table(mesh).size(); }

long euler_characteristic(const Mesh& mesh) {
  return static_cast<long>(mesh.vertices.size()) - static_cast<long>(count_edges(mesh)) +
         static_cast<long>(mesh.triangles.size());
}

bool is_consistently_oriented(const Mesh& mesh) {
  for (const auto& [key, entry] : edge_table(mesh)) {
    if (entry.first > 2) return false;
    if (entry.first == 2 && entry.second != 0) return false;
  }
  return true;
}

std::size_t count_boundary_edges(const Mesh& mesh) {
  std::size_t count = 0;
  for (const auto& [key, entry] : edge_table(mesh))
    if (entry.first == 1) ++count;
  return count;
}

std::vector<bool> boundary_vertices(const Mesh& mesh) {
  std::vector<bool> flags(mesh.vertices.size(), false);
  for (const auto& [key, entry] : edge_table(mesh)) {
    if (entry.first == 1) {
      flags[key.first] = true;
      flags[key.second] = true;
    }
  }
  return flags;
}

double mean_edge_length(const Mesh& mesh) {
  const auto table = edge_table(mesh);
  if (table.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [key, entry] : table) total += norm(mesh.vertices[key.first] - mesh.vertices[key.second]);
  return total / static_cast<double>(table.size());
}

}  // namespace pclap
