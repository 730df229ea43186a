#pragma once

// Applications driven by a LaplacianPair: heat diffusion, heat-method
// geodesics, smoothing, spectral filtering and ARAP deformation.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pclap/geometry.hpp"
#include "pclap/knn_graph.hpp"
#include "pclap/laplacian.hpp"
#include "pclap/sparse.hpp"

namespace pclap {

// ---- heat diffusion ----

struct HeatOptions {
  double dt = 1e-3;
  std::size_t steps = 1000;
  bool implicit = false;  // backward Euler (M + dt L) u' = M u
};

struct HeatResult {
  std::vector<double> u;
  double lambda_max = 0.0;  // power-iteration estimate of M^-1 L
  std::string warning;      // nonempty when explicit stepping is unstable
};

HeatResult heat_diffuse(const LaplacianPair& pair, std::span<const double> u0, const HeatOptions& options = {});

// sum_i M_ii u_i
double mass_weighted_sum(const LaplacianPair& pair, std::span<const double> u);

// ---- geodesics ----

// Heat method with the pair's operator for both solves and the mesh's
// per-face gradient and integrated divergence. t = (mean edge length)^2 in
// units where the masses are vertex areas.
std::vector<double> geodesic_heat(const Mesh& mesh, const LaplacianPair& pair, std::size_t source);

// Per-face gradient of a piecewise-linear function.
std::vector<Vec3> face_gradients(const Mesh& mesh, std::span<const double> u);
// Integrated divergence of a per-face vector field at each vertex.
std::vector<double> vertex_divergence(const Mesh& mesh, std::span<const Vec3> field);

// ---- smoothing ----

// x <- x - step / lambda_max * M^-1 L x per axis, `iters` times.
std::vector<Vec3> laplacian_smooth(std::span<const Vec3> points, const LaplacianPair& pair, double step = 0.5,
                                   std::size_t iters = 10);

// ---- spectral filtering ----

enum class ResidualPolicy { Drop, Keep };

// gain(mode index, eigenvalue)
using SpectralGain = std::function<double(std::size_t, double)>;

// Filters each column of `signal` (n x c) in the M-orthonormal eigenbasis.
Matrix spectral_filter(const EigenPairs& eig, const MassVector& mass, const Matrix& signal, const SpectralGain& gain,
                       ResidualPolicy policy);
Matrix spectral_filter(const LaplacianPair& pair, const Matrix& signal, const SpectralGain& gain, std::size_t n_modes,
                       ResidualPolicy policy, std::uint64_t seed = 0);

Matrix positions_matrix(std::span<const Vec3> points);
std::vector<Vec3> matrix_positions(const Matrix& m);

// ---- ARAP ----

struct DeformationConstraints {
  std::vector<std::size_t> fixed;
  std::vector<Vec3> fixed_targets;
  std::vector<std::size_t> handles;
  std::vector<Vec3> handle_targets;

  void validate(std::size_t n) const;
};

struct ArapResult {
  std::vector<Vec3> positions;
  std::vector<double> energies;  // after each iteration
};

// Local/global ARAP over the graph's 1-rings with w_ij = -L_ij.
ArapResult arap_deform(std::span<const Vec3> rest, const KnnGraph& graph, const LaplacianPair& pair,
                       const DeformationConstraints& constraints, std::size_t iters = 10);

double arap_energy(std::span<const Vec3> rest, std::span<const Vec3> deformed, const KnnGraph& graph,
                   const LaplacianPair& pair);

}  // namespace pclap
