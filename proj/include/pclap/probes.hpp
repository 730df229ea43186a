#pragma once

// Probe functions used to compare operators: scaled eigenfunctions of the
// ground-truth operator and random directional sinusoids.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pclap/dense.hpp"
#include "pclap/geometry.hpp"
#include "pclap/laplacian.hpp"
#include "pclap/sparse.hpp"

namespace pclap {

enum class ProbeKind { Spectral, Sinusoid, Polynomial };
std::string probe_kind_name(ProbeKind kind);

struct ProbeMeta {
  ProbeKind kind = ProbeKind::Spectral;
  double lambda = 0.0;  // spectral
  // sinusoid: (1/2k) sin(k psi (a x + b y + c z) + phi)
  double k = 0.0, psi = 1.0, phi = 0.0, a = 0.0, b = 0.0, c = 0.0;
  std::string name;  // polynomial, or a short label for the others

  friend bool operator==(const ProbeMeta&, const ProbeMeta&) = default;
};

struct ProbeSet {
  Matrix values;  // n_vertices x n_probes
  std::vector<ProbeMeta> meta;

  std::size_t num_vertices() const { return values.rows; }
  std::size_t num_probes() const { return values.cols; }
  void append(const ProbeSet& other);
  friend bool operator==(const ProbeSet&, const ProbeSet&) = default;
};

inline constexpr double kSpectralShift = 0.1;
inline constexpr std::size_t kSpectralProbeCount = 64;
inline constexpr int kSpatialFrequencyCount = 14;

// Eigenvectors 1..count scaled by 1/(lambda + 0.1).
ProbeSet spectral_probes(const LaplacianPair& gt, std::size_t count = kSpectralProbeCount, std::uint64_t seed = 0);
ProbeSet spectral_probes_from(const EigenPairs& eig, std::size_t count = kSpectralProbeCount);

// 14 sinusoids with k = 2^(m/2), m = 0..13.
ProbeSet spatial_probes(const PointCloud& points, std::uint64_t seed);

// 64 spectral probes, 42 axis-aligned sinusoids and x, y, z, x^2, y^2, z^2.
ProbeSet eval_probe_set(const LaplacianPair& gt, const PointCloud& points, std::uint64_t seed = 0);
ProbeSet eval_probe_set_from(const EigenPairs& eig, const PointCloud& points);
// The 48 non-spectral members of the evaluation set.
ProbeSet eval_fixed_probes(const PointCloud& points);

double sinusoid_value(const ProbeMeta& meta, const Vec3& p);

// Binary: one JSON header line, then row-major little-endian f64 values.
void save_probes(const ProbeSet& set, const std::filesystem::path& path);
ProbeSet load_probes(const std::filesystem::path& path);
void save_probes_csv(const ProbeSet& set, const std::filesystem::path& path);

}  // namespace pclap
