#include <algorithm>
#include <map>
#include <numbers>
#include <tuple>

#include "pclap/geometry.hpp"
#include "pclap/random.hpp"

namespace pclap {
namespace {

constexpr double kPi = std::numbers::pi;

// Flips triangles whose normal points toward `center`. Valid for convex or
// star-shaped surfaces around `center`.
void orient_away_from(Mesh& mesh, const Vec3& center) {
  for (auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    const Vec3 n = cross(b - a, c - a);
    const Vec3 centroid = (a + b + c) / 3.0;
    if (dot(n, centroid - center) < 0.0) std::swap(t[1], t[2]);
  }
}

std::array<double, 9> random_rotation(Rng& rng) {
  double q[4];
  double len = 0.0;
  do {
    len = 0.0;
    for (double& c : q) {
      c = rng.normal();
      len += c * c;
    }
  } while (len < 1e-12);
  len = std::sqrt(len);
  const double w = q[0] / len, x = q[1] / len, y = q[2] / len, z = q[3] / len;
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

void rotate(Mesh& mesh, const std::array<double, 9>& R) {
  for (Vec3& p : mesh.vertices) {
    const Vec3 q = p;
    p = {R[0] * q.x + R[1] * q.y + R[2] * q.z, R[3] * q.x + R[4] * q.y + R[5] * q.z,
         R[6] * q.x + R[7] * q.y + R[8] * q.z};
  }
}

// Triangulates the band between two closed loops of vertices ordered by
// increasing angle. Orientation is fixed by the caller.
void stitch_rings(const std::vector<std::size_t>& outer, const std::vector<double>& outer_angle,
                  const std::vector<std::size_t>& inner, const std::vector<double>& inner_angle,
                  std::vector<Triangle>& out) {
  const std::size_t na = outer.size();
  const std::size_t nb = inner.size();
  if (nb == 1) {
    for (std::size_t i = 0; i < na; ++i) out.push_back({outer[i], outer[(i + 1) % na], inner[0]});
    return;
  }
  auto angle_a = [&](std::size_t i) { return i < na ? outer_angle[i] : outer_angle[i - na] + 2 * kPi; };
  auto angle_b = [&](std::size_t j) { return j < nb ? inner_angle[j] : inner_angle[j - nb] + 2 * kPi; };
  std::size_t i = 0, j = 0;
  while (i < na || j < nb) {
    const bool advance_a = j == nb || (i < na && angle_a(i + 1) < angle_b(j + 1));
    if (advance_a) {
      out.push_back({outer[i % na], outer[(i + 1) % na], inner[j % nb]});
      ++i;
    } else {
      out.push_back({outer[i % na], inner[(j + 1) % nb], inner[j % nb]});
      ++j;
    }
  }
}

void check_non_degenerate(const Mesh& mesh) {
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    if (!(triangle_area(mesh, t) > 1e-14))
      throw std::logic_error("generator produced degenerate triangle " + std::to_string(t));
}

}  // namespace

ShapeKind parse_shape_kind(std::string_view name) {
  if (name == "sphere") return ShapeKind::Sphere;
  if (name == "torus") return ShapeKind::Torus;
  if (name == "box") return ShapeKind::Box;
  if (name == "plane") return ShapeKind::Plane;
  if (name == "cylinder") return ShapeKind::Cylinder;
  if (name == "blended-blob" || name == "blob") return ShapeKind::BlendedBlob;
  throw std::invalid_argument("unsupported shape kind '" + std::string(name) + "'");
}

std::string_view shape_kind_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Torus: return "torus";
    case ShapeKind::Box: return "box";
    case ShapeKind::Plane: return "plane";
    case ShapeKind::Cylinder: return "cylinder";
    case ShapeKind::BlendedBlob: return "blended-blob";
  }
  return "unknown";
}

Mesh make_icosphere(int frequency) {
  if (frequency < 1) throw std::invalid_argument("make_icosphere: frequency must be >= 1");
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> base;
  for (double s1 : {-1.0, 1.0})
    for (double s2 : {-1.0, 1.0}) {
      base.push_back({0, s1, s2 * phi});
      base.push_back({s1, s2 * phi, 0});
      base.push_back({s2 * phi, 0, s1});
    }
  std::vector<Triangle> faces;
  for (std::size_t a = 0; a < 12; ++a)
    for (std::size_t b = a + 1; b < 12; ++b)
      for (std::size_t c = b + 1; c < 12; ++c) {
        auto is_edge = [&](std::size_t u, std::size_t v) {
          return std::abs(norm(base[u] - base[v]) - 2.0) < 1e-9;
        };
        if (is_edge(a, b) && is_edge(b, c) && is_edge(a, c)) faces.push_back({a, b, c});
      }
  {
    Mesh ico{base, faces};
    orient_away_from(ico, {0, 0, 0});
    faces = ico.triangles;
  }

  Mesh mesh;
  using Key = std::vector<std::pair<std::size_t, int>>;
  std::map<Key, std::size_t> lookup;
  const int f = frequency;
  for (const auto& face : faces) {
    auto vertex = [&](int i, int j) {
      const int w[3] = {f - i - j, i, j};
      Key key;
      for (int c = 0; c < 3; ++c)
        if (w[c] > 0) key.emplace_back(face[c], w[c]);
      std::sort(key.begin(), key.end());
      auto it = lookup.find(key);
      if (it != lookup.end()) return it->second;
      Vec3 p;
      for (const auto& [corner, weight] : key) p += base[corner] * (static_cast<double>(weight) / f);
      mesh.vertices.push_back(normalized(p));
      return lookup[key] = mesh.vertices.size() - 1;
    };
    for (int i = 0; i < f; ++i)
      for (int j = 0; i + j < f; ++j) {
        mesh.triangles.push_back({vertex(i, j), vertex(i + 1, j), vertex(i, j + 1)});
        if (i + j + 2 <= f) mesh.triangles.push_back({vertex(i + 1, j), vertex(i + 1, j + 1), vertex(i, j + 1)});
      }
  }
  orient_away_from(mesh, {0, 0, 0});
  return mesh;
}

Mesh make_plane_grid(int nx, int ny, double half_extent) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("make_plane_grid: need at least 2x2 vertices");
  Mesh mesh;
  const double aspect = static_cast<double>(ny - 1) / (nx - 1);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      mesh.vertices.push_back({-half_extent + 2.0 * half_extent * i / (nx - 1),
                               (-half_extent + 2.0 * half_extent * j / (ny - 1)) * aspect, 0.0});
  auto id = [nx](int i, int j) { return static_cast<std::size_t>(j * nx + i); };
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const std::size_t a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      if ((i + j) % 2 == 0) {
        mesh.triangles.push_back({a, b, c});
        mesh.triangles.push_back({a, c, d});
      } else {
        mesh.triangles.push_back({a, b, d});
        mesh.triangles.push_back({b, c, d});
      }
    }
  return mesh;
}

Mesh make_torus(int nu, int nv, double major_radius, double minor_radius) {
  if (nu < 3 || nv < 3) throw std::invalid_argument("make_torus: need nu, nv >= 3");
  if (!(minor_radius > 0.0 && major_radius > minor_radius))
    throw std::invalid_argument("make_torus: need 0 < minor < major radius");
  Mesh mesh;
  for (int a = 0; a < nu; ++a) {
    const double u = 2 * kPi * a / nu;
    for (int b = 0; b < nv; ++b) {
      // Half-step offset on alternate rings gives near-equilateral triangles.
      const double v = 2 * kPi * (b + 0.5 * (a % 2)) / nv;
      const double ring = major_radius + minor_radius * std::cos(v);
      mesh.vertices.push_back({ring * std::cos(u), ring * std::sin(u), minor_radius * std::sin(v)});
    }
  }
  auto id = [nu, nv](int a, int b) { return static_cast<std::size_t>(((a + nu) % nu) * nv + (b + nv) % nv); };
  for (int a = 0; a < nu; ++a)
    for (int b = 0; b < nv; ++b) {
      const std::size_t p00 = id(a, b), p10 = id(a + 1, b), p11 = id(a + 1, b + 1), p01 = id(a, b + 1);
      if (a % 2 == 0) {
        mesh.triangles.push_back({p00, p10, p01});
        mesh.triangles.push_back({p10, p11, p01});
      } else {
        mesh.triangles.push_back({p00, p11, p01});
        mesh.triangles.push_back({p00, p10, p11});
      }
    }
  // Outward means away from the nearest core-circle point.
  for (auto& t : mesh.triangles) {
    const Vec3& p = mesh.vertices[t[0]];
    const Vec3& q = mesh.vertices[t[1]];
    const Vec3& r = mesh.vertices[t[2]];
    const Vec3 c = (p + q + r) / 3.0;
    const double rho = std::hypot(c.x, c.y);
    const Vec3 core{c.x / rho * major_radius, c.y / rho * major_radius, 0.0};
    if (dot(cross(q - p, r - p), c - core) < 0.0) std::swap(t[1], t[2]);
  }
  return mesh;
}

Mesh make_box(const Vec3& dims, double spacing) {
  if (!(dims.x > 0 && dims.y > 0 && dims.z > 0 && spacing > 0))
    throw std::invalid_argument("make_box: dimensions and spacing must be positive");
  const int n[3] = {std::max(1, static_cast<int>(std::lround(dims.x / spacing))),
                    std::max(1, static_cast<int>(std::lround(dims.y / spacing))),
                    std::max(1, static_cast<int>(std::lround(dims.z / spacing)))};
  Mesh mesh;
  std::map<std::tuple<int, int, int>, std::size_t> lookup;
  auto vertex = [&](int i, int j, int k) {
    const auto key = std::make_tuple(i, j, k);
    auto it = lookup.find(key);
    if (it != lookup.end()) return it->second;
    mesh.vertices.push_back({dims.x * (static_cast<double>(i) / n[0] - 0.5),
                             dims.y * (static_cast<double>(j) / n[1] - 0.5),
                             dims.z * (static_cast<double>(k) / n[2] - 0.5)});
    return lookup[key] = mesh.vertices.size() - 1;
  };
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3;
    const int v = (axis + 2) % 3;
    for (int side : {0, n[axis]})
      for (int a = 0; a < n[u]; ++a)
        for (int b = 0; b < n[v]; ++b) {
          auto at = [&](int da, int db) {
            int c[3];
            c[axis] = side;
            c[u] = a + da;
            c[v] = b + db;
            return vertex(c[0], c[1], c[2]);
          };
          const std::size_t p00 = at(0, 0), p10 = at(1, 0), p11 = at(1, 1), p01 = at(0, 1);
          if ((a + b) % 2 == 0) {
            mesh.triangles.push_back({p00, p10, p11});
            mesh.triangles.push_back({p00, p11, p01});
          } else {
            mesh.triangles.push_back({p00, p10, p01});
            mesh.triangles.push_back({p10, p11, p01});
          }
        }
  }
  orient_away_from(mesh, {0, 0, 0});
  return mesh;
}

Mesh make_cylinder(double radius, double height, double spacing) {
  if (!(radius > 0 && height > 0 && spacing > 0))
    throw std::invalid_argument("make_cylinder: radius, height and spacing must be positive");
  const int n_theta = std::max(8, static_cast<int>(std::lround(2 * kPi * radius / spacing)));
  const int n_z = std::max(1, static_cast<int>(std::lround(height / spacing)));
  const int n_cap = std::max(1, static_cast<int>(std::lround(radius / spacing)));
  Mesh mesh;
  std::vector<std::vector<std::size_t>> rings(n_z + 1);
  std::vector<std::vector<double>> ring_angles(n_z + 1);
  for (int k = 0; k <= n_z; ++k) {
    const double z = -height / 2 + height * k / n_z;
    for (int i = 0; i < n_theta; ++i) {
      const double th = 2 * kPi * (i + 0.5 * (k % 2)) / n_theta;
      rings[k].push_back(mesh.vertices.size());
      ring_angles[k].push_back(th);
      mesh.vertices.push_back({radius * std::cos(th), radius * std::sin(th), z});
    }
  }
  for (int k = 0; k < n_z; ++k) stitch_rings(rings[k], ring_angles[k], rings[k + 1], ring_angles[k + 1], mesh.triangles);

  for (int end : {0, n_z}) {
    std::vector<std::size_t> outer = rings[end];
    std::vector<double> outer_angle = ring_angles[end];
    const double z = mesh.vertices[outer[0]].z;
    for (int c = n_cap - 1; c >= 0; --c) {
      std::vector<std::size_t> inner;
      std::vector<double> inner_angle;
      if (c == 0) {
        inner.push_back(mesh.vertices.size());
        inner_angle.push_back(0.0);
        mesh.vertices.push_back({0.0, 0.0, z});
      } else {
        const double r = radius * c / n_cap;
        const int count = std::max(6, static_cast<int>(std::lround(n_theta * static_cast<double>(c) / n_cap)));
        const double offset = 0.5 * (c % 2) * 2 * kPi / count;
        for (int i = 0; i < count; ++i) {
          const double th = offset + 2 * kPi * i / count;
          inner.push_back(mesh.vertices.size());
          inner_angle.push_back(th);
          mesh.vertices.push_back({r * std::cos(th), r * std::sin(th), z});
        }
      }
      stitch_rings(outer, outer_angle, inner, inner_angle, mesh.triangles);
      outer = std::move(inner);
      outer_angle = std::move(inner_angle);
    }
  }
  orient_away_from(mesh, {0, 0, 0});
  return mesh;
}

Mesh make_shape(ShapeKind kind, int resolution, std::uint64_t seed) {
  if (resolution < 500 || resolution > 5000)
    throw std::invalid_argument("make_shape: resolution must be within [500, 5000] vertices");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
  const double target = resolution;
  Mesh mesh;
  switch (kind) {
    case ShapeKind::Sphere: {
      const int f = std::max(1, static_cast<int>(std::lround(std::sqrt((target - 2) / 10.0))));
      mesh = make_icosphere(f);
      const Vec3 axes{rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0)};
      for (Vec3& p : mesh.vertices) p = {p.x * axes.x, p.y * axes.y, p.z * axes.z};
      break;
    }
    case ShapeKind::BlendedBlob: {
      const int f = std::max(1, static_cast<int>(std::lround(std::sqrt((target - 2) / 10.0))));
      mesh = make_icosphere(f);
      const int bumps = 3 + static_cast<int>(rng.index(4));
      std::vector<std::tuple<Vec3, double, double>> params;
      for (int b = 0; b < bumps; ++b) {
        Vec3 c{rng.normal(), rng.normal(), rng.normal()};
        c = normalized(c);
        params.emplace_back(c, rng.uniform(-0.35, 0.6), rng.uniform(0.3, 0.7));
      }
      for (Vec3& p : mesh.vertices) {
        double log_r = 0.0;
        for (const auto& [c, amp, sigma] : params) log_r += amp * std::exp(-norm2(p - c) / (2 * sigma * sigma));
        p *= std::exp(log_r);
      }
      break;
    }
    case ShapeKind::Torus: {
      const double minor = rng.uniform(0.2, 0.5);
      const double ratio = 1.0 / minor;
      const int nv = std::max(6, static_cast<int>(std::lround(std::sqrt(target / ratio))));
      const int nu = std::max(6, static_cast<int>(std::lround(target / nv)));
      mesh = make_torus(nu, nv, 1.0, minor);
      break;
    }
    case ShapeKind::Box: {
      Vec3 dims{rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)};
      if (rng.uniform() < 0.5) dims.z = rng.uniform(0.06, 0.2);  // thin slab
      const double area = 2 * (dims.x * dims.y + dims.y * dims.z + dims.x * dims.z);
      mesh = make_box(dims, std::sqrt(area / target));
      break;
    }
    case ShapeKind::Cylinder: {
      const double radius = rng.uniform(0.15, 0.5);
      const double height = rng.uniform(0.8, 2.0);
      const double area = 2 * kPi * radius * height + 2 * kPi * radius * radius;
      mesh = make_cylinder(radius, height, std::sqrt(area / target));
      break;
    }
    case ShapeKind::Plane: {
      const int side = std::max(2, static_cast<int>(std::lround(std::sqrt(target))));
      mesh = make_plane_grid(side, side);
      const double h = 2.0 / (side - 1);
      const auto boundary = boundary_vertices(mesh);
      for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        if (boundary[i]) continue;
        mesh.vertices[i].x += rng.uniform(-0.2, 0.2) * h;
        mesh.vertices[i].y += rng.uniform(-0.2, 0.2) * h;
      }
      break;
    }
  }
  rotate(mesh, random_rotation(rng));
  check_non_degenerate(mesh);
  return mesh;
}

}  // namespace pclap
