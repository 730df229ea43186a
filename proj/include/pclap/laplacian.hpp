#pragma once

// Stiffness/mass pairs: cotangent ground truth on meshes, graph baselines,
// and assembly from per-edge weights.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pclap/geometry.hpp"
#include "pclap/knn_graph.hpp"
#include "pclap/sparse.hpp"

namespace pclap {

enum class LaplacianSource { Cotangent, Uniform, HeatKernel, Learned };

std::string_view source_name(LaplacianSource source);
LaplacianSource parse_source(std::string_view name);

struct LaplacianPair {
  SparseMatrix stiffness;  // symmetric, off-diagonal <= 0, zero row sums
  MassVector mass;         // positive, mean 1
  LaplacianSource source = LaplacianSource::Cotangent;

  std::size_t size() const { return mass.size(); }
};

// w_ij = 1/2 (cot a + cot b) with a single term on boundary edges; mass is the
// mixed Voronoi area, falling back to area/3 on obtuse triangles. Throws on a
// degenerate triangle.
LaplacianPair cotangent_laplacian(const Mesh& mesh);

// Per-triangle cotangent half-weights in edge order (1,2), (2,0), (0,1).
std::array<double, 3> triangle_cot_weights(const Vec3& a, const Vec3& b, const Vec3& c);

LaplacianPair uniform_laplacian(const KnnGraph& graph);

// Gaussian weights exp(-d^2 / 4t) on graph edges; mass is the weighted degree.
LaplacianPair heat_kernel_laplacian(const KnnGraph& graph, double t);
// Squared mean edge length of the graph, a scale-aware choice of t.
double default_heat_time(const KnnGraph& graph);

// One weight per undirected edge of `graph`, in undirected_edges() order.
LaplacianPair assemble_learned(const KnnGraph& graph, std::span<const double> edge_weights,
                               std::span<const double> masses);
// Stiffness from an explicit undirected edge list.
SparseMatrix assemble_stiffness(std::size_t n, std::span<const UndirectedEdge> edges, std::span<const double> weights);

// M^{-1} L f
std::vector<double> apply_laplacian(const LaplacianPair& pair, std::span<const double> f);
// Column-wise M^{-1} L F.
Matrix apply_laplacian(const LaplacianPair& pair, const Matrix& F);

double quadratic_form(const SparseMatrix& L, std::span<const double> f);

// Writes <prefix>.mtx, <prefix>.mass.txt and <prefix>.json.
void save_laplacian(const LaplacianPair& pair, const std::filesystem::path& prefix);
LaplacianPair load_laplacian(const std::filesystem::path& prefix);

}  // namespace pclap
