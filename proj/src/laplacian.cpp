#include "pclap/laplacian.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace pclap {

std::string_view source_name(LaplacianSource source) {
  switch (source) {
    case LaplacianSource::Cotangent: return "cotangent";
    case LaplacianSource::Uniform: return "uniform";
    case LaplacianSource::HeatKernel: return "heat-kernel";
    case LaplacianSource::Learned: return "learned";
  }
  return "unknown";
}

LaplacianSource parse_source(std::string_view name) {
  for (auto s : {LaplacianSource::Cotangent, LaplacianSource::Uniform, LaplacianSource::HeatKernel,
                 LaplacianSource::Learned})
    if (source_name(s) == name) return s;
  throw std::invalid_argument("unknown Laplacian source '" + std::string(name) + "'");
}

namespace {

double cot_at(const Vec3& apex, const Vec3& p, const Vec3& q) {
  const Vec3 u = p - apex, v = q - apex;
  return dot(u, v) / norm(cross(u, v));
}

struct EdgeWeight {
  std::size_t i, j;
  double w;
};

}  // namespace

std::array<double, 3> triangle_cot_weights(const Vec3& a, const Vec3& b, const Vec3& c) {
  return {0.5 * cot_at(a, b, c), 0.5 * cot_at(b, c, a), 0.5 * cot_at(c, a, b)};
}

SparseMatrix assemble_stiffness(std::size_t n, std::span<const UndirectedEdge> edges, std::span<const double> weights) {
  if (edges.size() != weights.size()) throw std::invalid_argument("assemble_stiffness: one weight per edge required");
  // Diagonals are accumulated in a fixed order so the result is reproducible.
  std::vector<double> diag(n, 0.0);
  std::vector<Triplet> t;
  t.reserve(2 * edges.size() + n);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    if (i >= n || j >= n || i == j) throw std::invalid_argument("assemble_stiffness: bad edge");
    t.push_back({i, j, -weights[e]});
    t.push_back({j, i, -weights[e]});
    diag[i] += weights[e];
    diag[j] += weights[e];
  }
  for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, diag[i]});
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

LaplacianPair cotangent_laplacian(const Mesh& mesh) {
  validate_mesh(mesh);
  const std::size_t n = mesh.num_vertices();
  std::vector<EdgeWeight> half;
  half.reserve(3 * mesh.num_triangles());
  std::vector<double> area(n, 0.0);

  for (std::size_t f = 0; f < mesh.num_triangles(); ++f) {
    const auto& tri = mesh.triangles[f];
    const Vec3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
    const double twice_area = norm(cross(b - a, c - a));
    const double scale = std::max({norm2(b - a), norm2(c - b), norm2(a - c)});
    if (!(twice_area > 1e-12 * scale))
      throw std::invalid_argument("cotangent_laplacian: degenerate triangle " + std::to_string(f));

    const auto w = triangle_cot_weights(a, b, c);
    for (int k = 0; k < 3; ++k) {
      std::size_t i = tri[(k + 1) % 3], j = tri[(k + 2) % 3];
      if (i > j) std::swap(i, j);
      half.push_back({i, j, w[k]});
    }

    const double A = 0.5 * twice_area;
    const bool obtuse = dot(b - a, c - a) < 0 || dot(a - b, c - b) < 0 || dot(a - c, b - c) < 0;
    if (obtuse) {
      for (int k = 0; k < 3; ++k) area[tri[k]] += A / 3.0;
    } else {
      // Voronoi region: 1/8 sum over incident edges of |e|^2 cot(opposite).
      // w[k] is half the cotangent at vertex k.
      const double ab = norm2(b - a), bc = norm2(c - b), ca = norm2(a - c);
      area[tri[0]] += 0.25 * (ab * w[2] + ca * w[1]);
      area[tri[1]] += 0.25 * (ab * w[2] + bc * w[0]);
      area[tri[2]] += 0.25 * (bc * w[0] + ca * w[1]);
    }
  }

  std::sort(half.begin(), half.end(), [](const EdgeWeight& x, const EdgeWeight& y) {
    return x.i != y.i ? x.i < y.i : (x.j != y.j ? x.j < y.j : x.w < y.w);
  });
  std::vector<UndirectedEdge> edges;
  std::vector<double> weights;
  for (std::size_t q = 0; q < half.size();) {
    std::size_t r = q;
    double w = 0.0;
    for (; r < half.size() && half[r].i == half[q].i && half[r].j == half[q].j; ++r) w += half[r].w;
    edges.push_back({half[q].i, half[q].j});
    weights.push_back(w);
    q = r;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!(area[i] > 0)) throw std::invalid_argument("cotangent_laplacian: vertex " + std::to_string(i) + " has no area");

  return {assemble_stiffness(n, edges, weights), MassVector(std::move(area)).normalized(), LaplacianSource::Cotangent};
}

LaplacianPair uniform_laplacian(const KnnGraph& graph) {
  const auto& edges = graph.undirected_edges();
  const std::vector<double> w(edges.size(), 1.0);
  return {assemble_stiffness(graph.num_vertices(), edges, w), MassVector::ones(graph.num_vertices()),
          LaplacianSource::Uniform};
}

LaplacianPair heat_kernel_laplacian(const KnnGraph& graph, double t) {
  if (!(t > 0)) throw std::invalid_argument("heat_kernel_laplacian: t must be positive");
  const auto& edges = graph.undirected_edges();
  const auto& p = graph.positions();
  std::vector<double> w(edges.size());
  std::vector<double> mass(graph.num_vertices(), 0.0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    w[e] = std::exp(-norm2(p[edges[e].i] - p[edges[e].j]) / (4.0 * t));
    mass[edges[e].i] += w[e];
    mass[edges[e].j] += w[e];
  }
  for (double& m : mass) m = std::max(m, 1e-300);
  return {assemble_stiffness(graph.num_vertices(), edges, w), MassVector(std::move(mass)).normalized(),
          LaplacianSource::HeatKernel};
}

double default_heat_time(const KnnGraph& graph) {
  const auto& edges = graph.undirected_edges();
  if (edges.empty()) return 1.0;
  double sum = 0.0;
  for (const auto& e : edges) sum += norm(graph.positions()[e.i] - graph.positions()[e.j]);
  const double h = sum / static_cast<double>(edges.size());
  return h * h;
}

LaplacianPair assemble_learned(const KnnGraph& graph, std::span<const double> edge_weights,
                               std::span<const double> masses) {
  const auto& edges = graph.undirected_edges();
  if (edge_weights.size() != edges.size())
    throw std::invalid_argument("assemble_learned: expected " + std::to_string(edges.size()) + " edge weights, got " +
                                std::to_string(edge_weights.size()));
  if (masses.size() != graph.num_vertices()) throw std::invalid_argument("assemble_learned: mass count mismatch");
  for (double w : edge_weights)
    if (!(w >= 0)) throw std::invalid_argument("assemble_learned: negative edge weight");
  for (double m : masses)
    if (!(m > 0)) throw std::invalid_argument("assemble_learned: nonpositive mass");
  return {assemble_stiffness(graph.num_vertices(), edges, edge_weights),
          MassVector(std::vector<double>(masses.begin(), masses.end())).normalized(), LaplacianSource::Learned};
}

std::vector<double> apply_laplacian(const LaplacianPair& pair, std::span<const double> f) {
  if (f.size() != pair.size())
    throw std::invalid_argument("apply_laplacian: function has " + std::to_string(f.size()) + " values for " +
                                std::to_string(pair.size()) + " vertices");
  auto y = spmv(pair.stiffness, f);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= pair.mass[i];
  return y;
}

Matrix apply_laplacian(const LaplacianPair& pair, const Matrix& F) {
  if (F.rows != pair.size()) throw std::invalid_argument("apply_laplacian: row count mismatch");
  Matrix out(F.rows, F.cols);
  const auto& rp = pair.stiffness.row_ptr();
  const auto& col = pair.stiffness.col();
  const auto& val = pair.stiffness.values();
  for (std::size_t i = 0; i < F.rows; ++i) {
    auto o = out.row(i);
    for (std::size_t q = rp[i]; q < rp[i + 1]; ++q) {
      const auto r = F.row(col[q]);
      for (std::size_t c = 0; c < F.cols; ++c) o[c] += val[q] * r[c];
    }
    const double inv = 1.0 / pair.mass[i];
    for (double& v : o) v *= inv;
  }
  return out;
}

double quadratic_form(const SparseMatrix& L, std::span<const double> f) {
  const auto Lf = spmv(L, f);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += f[i] * Lf[i];
  return s;
}

void save_laplacian(const LaplacianPair& pair, const std::filesystem::path& prefix) {
  auto with = [&](const char* ext) { return std::filesystem::path(prefix.string() + ext); };
  save_matrix_market(pair.stiffness, with(".mtx"));
  save_vector(pair.mass.values(), with(".mass.txt"));
  nlohmann::ordered_json j;
  j["source"] = source_name(pair.source);
  j["vertices"] = pair.size();
  j["nonzeros"] = pair.stiffness.nnz();
  j["stiffness"] = with(".mtx").filename().string();
  j["mass"] = with(".mass.txt").filename().string();
  std::ofstream out(with(".json"));
  if (!out) throw std::runtime_error("cannot write " + with(".json").string());
  out << j.dump(2) << '\n';
}

LaplacianPair load_laplacian(const std::filesystem::path& prefix) {
  auto with = [&](const char* ext) { return std::filesystem::path(prefix.string() + ext); };
  std::ifstream in(with(".json"));
  if (!in) throw std::runtime_error("cannot read " + with(".json").string());
  const auto j = nlohmann::json::parse(in);
  LaplacianPair pair{load_matrix_market(with(".mtx")), MassVector(load_vector(with(".mass.txt"))),
                     parse_source(j.at("source").get<std::string>())};
  if (pair.stiffness.rows() != pair.mass.size()) throw std::runtime_error("load_laplacian: size mismatch");
  return pair;
}

}  // namespace pclap
