#include "pclap/apps.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pclap {
namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::runtime_error(std::string(what) + ": non-finite value");
}

// M + t L
SparseMatrix shifted_system(const LaplacianPair& pair, double t, double mass_scale = 1.0) {
  const auto& L = pair.stiffness;
  std::vector<Triplet> trip;
  trip.reserve(L.nnz() + L.rows());
  for (std::size_t i = 0; i < L.rows(); ++i) {
    for (std::size_t q = L.row_ptr()[i]; q < L.row_ptr()[i + 1]; ++q) trip.push_back({i, L.col()[q], t * L.values()[q]});
    trip.push_back({i, i, mass_scale * pair.mass[i]});
  }
  return SparseMatrix::from_triplets(L.rows(), L.cols(), std::move(trip));
}

std::vector<double> apply_operator(const LaplacianPair& pair, std::span<const double> u) {
  std::vector<double> y = pair.stiffness.multiply(u);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= pair.mass[i];
  return y;
}

}  // namespace

// ---- heat diffusion ----

double mass_weighted_sum(const LaplacianPair& pair, std::span<const double> u) {
  if (u.size() != pair.size()) throw std::invalid_argument("mass_weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += pair.mass[i] * u[i];
  return s;
}

HeatResult heat_diffuse(const LaplacianPair& pair, std::span<const double> u0, const HeatOptions& options) {
  if (u0.size() != pair.size()) throw std::invalid_argument("heat_diffuse: field size does not match the operator");
  if (!(options.dt > 0)) throw std::invalid_argument("heat_diffuse: dt must be positive");
  require_finite(u0, "heat_diffuse");
  HeatResult r;
  r.u.assign(u0.begin(), u0.end());
  r.lambda_max = estimate_lambda_max(pair.stiffness, pair.mass);
  if (!options.implicit && options.dt * r.lambda_max >= 2.0)
    r.warning = "explicit heat step unstable: dt * lambda_max = " + std::to_string(options.dt * r.lambda_max) +
                " >= 2";

  if (options.implicit) {
    const SparseMatrix A = shifted_system(pair, options.dt);
    std::vector<double> rhs(r.u.size());
    for (std::size_t s = 0; s < options.steps; ++s) {
      for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = pair.mass[i] * r.u[i];
      r.u = cg_solve(A, rhs, {.tol = 1e-12}, r.u).x;
    }
  } else {
    std::vector<double> y(r.u.size());
    for (std::size_t s = 0; s < options.steps; ++s) {
      pair.stiffness.multiply(r.u, y);
      for (std::size_t i = 0; i < y.size(); ++i) r.u[i] -= options.dt * y[i] / pair.mass[i];
    }
  }
  require_finite(r.u, "heat_diffuse");
  return r;
}

// ---- geodesics ----

std::vector<Vec3> face_gradients(const Mesh& mesh, std::span<const double> u) {
  if (u.size() != mesh.num_vertices()) throw std::invalid_argument("face_gradients: size mismatch");
  std::vector<Vec3> g(mesh.num_triangles());
  for (std::size_t f = 0; f < g.size(); ++f) {
    const auto [a, b, c] = mesh.triangles[f];
    const Vec3 &xa = mesh.vertices[a], &xb = mesh.vertices[b], &xc = mesh.vertices[c];
    const Vec3 n2 = cross(xb - xa, xc - xa);  // |n2| = 2 area
    const double area2 = norm(n2);
    if (area2 <= 0) continue;
    const Vec3 n = n2 / area2;
    g[f] = (u[a] * cross(n, xc - xb) + u[b] * cross(n, xa - xc) + u[c] * cross(n, xb - xa)) / area2;
  }
  return g;
}

std::vector<double> vertex_divergence(const Mesh& mesh, std::span<const Vec3> field) {
  if (field.size() != mesh.num_triangles()) throw std::invalid_argument("vertex_divergence: size mismatch");
  std::vector<double> div(mesh.num_vertices(), 0.0);
  for (std::size_t f = 0; f < field.size(); ++f) {
    const auto& t = mesh.triangles[f];
    const auto hc = triangle_cot_weights(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = t[k], j = t[(k + 1) % 3], l = t[(k + 2) % 3];
      // hc[l] sits opposite edge (i, j); hc[j] opposite edge (i, l).
      div[i] += hc[(k + 2) % 3] * dot(mesh.vertices[j] - mesh.vertices[i], field[f]) +
                hc[(k + 1) % 3] * dot(mesh.vertices[l] - mesh.vertices[i], field[f]);
    }
  }
  return div;
}

std::vector<double> geodesic_heat(const Mesh& mesh, const LaplacianPair& pair, std::size_t source) {
  const std::size_t n = mesh.num_vertices();
  if (pair.size() != n) throw std::invalid_argument("geodesic_heat: mesh and operator sizes differ");
  if (source >= n) throw std::out_of_range("geodesic_heat: source vertex out of range");

  double area = 0.0;
  for (std::size_t f = 0; f < mesh.num_triangles(); ++f) area += triangle_area(mesh, f);
  const double h = mean_edge_length(mesh);
  const SparseMatrix A = shifted_system(pair, h * h, area / static_cast<double>(pair.mass.mean() * n));
  std::vector<double> delta(n, 0.0);
  delta[source] = 1.0;
  const auto u = cg_solve(A, delta, {.tol = 1e-12}).x;

  auto X = face_gradients(mesh, u);
  for (Vec3& g : X) {
    const double len = norm(g);
    g = len > 0 ? g * (-1.0 / len) : Vec3{};
  }
  std::vector<double> rhs = vertex_divergence(mesh, X);
  for (double& v : rhs) v = -v;
  auto phi = cg_solve(pair.stiffness, rhs, {.tol = 1e-12, .deflate_constant = true}).x;
  const double base = phi[source];
  for (double& v : phi) v = std::max(0.0, v - base);
  phi[source] = 0.0;
  return phi;
}

// ---- smoothing ----

std::vector<Vec3> laplacian_smooth(std::span<const Vec3> points, const LaplacianPair& pair, double step,
                                   std::size_t iters) {
  if (points.size() != pair.size()) throw std::invalid_argument("laplacian_smooth: size mismatch");
  if (!(step > 0.0 && step <= 1.0)) throw std::invalid_argument("laplacian_smooth: step must be in (0, 1]");
  const double c = step / estimate_lambda_max(pair.stiffness, pair.mass);
  std::vector<Vec3> x(points.begin(), points.end());
  std::vector<double> axis(x.size());
  for (std::size_t it = 0; it < iters; ++it)
    for (int d = 0; d < 3; ++d) {
      for (std::size_t i = 0; i < x.size(); ++i) axis[i] = x[i][d];
      const auto y = apply_operator(pair, axis);
      for (std::size_t i = 0; i < x.size(); ++i) x[i][d] -= c * y[i];
    }
  return x;
}

// ---- spectral filtering ----

Matrix positions_matrix(std::span<const Vec3> points) {
  Matrix m(points.size(), 3);
  for (std::size_t i = 0; i < points.size(); ++i)
    for (int d = 0; d < 3; ++d) m(i, d) = points[i][d];
  return m;
}

std::vector<Vec3> matrix_positions(const Matrix& m) {
  if (m.cols != 3) throw std::invalid_argument("matrix_positions: need 3 columns");
  std::vector<Vec3> p(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) p[i] = {m(i, 0), m(i, 1), m(i, 2)};
  return p;
}

Matrix spectral_filter(const EigenPairs& eig, const MassVector& mass, const Matrix& signal, const SpectralGain& gain,
                       ResidualPolicy policy) {
  const std::size_t n = signal.rows;
  if (mass.size() != n) throw std::invalid_argument("spectral_filter: size mismatch");
  for (const auto& v : eig.vectors)
    if (v.size() != n) throw std::invalid_argument("spectral_filter: eigenvector size mismatch");
  Matrix out(n, signal.cols, 0.0);
  for (std::size_t c = 0; c < signal.cols; ++c) {
    const auto s = signal.column(c);
    std::vector<double> projected(n, 0.0), filtered(n, 0.0);
    for (std::size_t m = 0; m < eig.size(); ++m) {
      const auto& v = eig.vectors[m];
      double coef = 0.0;
      for (std::size_t i = 0; i < n; ++i) coef += mass[i] * v[i] * s[i];
      const double g = gain(m, eig.values[m]);
      for (std::size_t i = 0; i < n; ++i) {
        projected[i] += coef * v[i];
        filtered[i] += g * coef * v[i];
      }
    }
    for (std::size_t i = 0; i < n; ++i)
      out(i, c) = filtered[i] + (policy == ResidualPolicy::Keep ? s[i] - projected[i] : 0.0);
  }
  return out;
}

Matrix spectral_filter(const LaplacianPair& pair, const Matrix& signal, const SpectralGain& gain, std::size_t n_modes,
                       ResidualPolicy policy, std::uint64_t seed) {
  if (n_modes == 0 || n_modes >= pair.size())
    throw std::invalid_argument("spectral_filter: n_modes must be in [1, n)");
  return spectral_filter(eig_smallest(pair.stiffness, pair.mass, n_modes, {.seed = seed}), pair.mass, signal, gain,
                         policy);
}

// ---- ARAP ----

void DeformationConstraints::validate(std::size_t n) const {
  if (fixed.empty()) throw std::invalid_argument("arap: the fixed set must be nonempty");
  if (fixed.size() != fixed_targets.size() || handles.size() != handle_targets.size())
    throw std::invalid_argument("arap: each constrained vertex needs one target");
  std::vector<char> seen(n, 0);
  for (const auto* set : {&fixed, &handles})
    for (std::size_t i : *set) {
      if (i >= n) throw std::out_of_range("arap: constrained vertex out of range");
      if (seen[i]) throw std::invalid_argument("arap: vertex " + std::to_string(i) + " constrained twice");
      seen[i] = 1;
    }
}

namespace {

using Mat3 = Eigen::Matrix3d;

struct ArapWeights {
  std::vector<double> w;  // per directed graph slot
};

ArapWeights slot_weights(const KnnGraph& graph, const LaplacianPair& pair) {
  ArapWeights a;
  a.w.resize(graph.num_directed_edges());
  for (std::size_t i = 0; i < graph.num_vertices(); ++i)
    for (std::size_t q = graph.row_ptr()[i]; q < graph.row_ptr()[i + 1]; ++q)
      a.w[q] = -pair.stiffness.coeff(i, graph.col()[q]);
  return a;
}

Eigen::Vector3d ev(const Vec3& v) { return {v.x, v.y, v.z}; }

std::vector<Mat3> fit_rotations(std::span<const Vec3> rest, std::span<const Vec3> def, const KnnGraph& graph,
                                const ArapWeights& aw) {
  std::vector<Mat3> R(graph.num_vertices(), Mat3::Identity());
  for (std::size_t i = 0; i < graph.num_vertices(); ++i) {
    Mat3 S = Mat3::Zero();
    for (std::size_t q = graph.row_ptr()[i]; q < graph.row_ptr()[i + 1]; ++q) {
      const std::size_t j = graph.col()[q];
      S += aw.w[q] * ev(rest[i] - rest[j]) * ev(def[i] - def[j]).transpose();
    }
    if (!(S.norm() > 1e-300) || !S.allFinite()) continue;
    Eigen::JacobiSVD<Mat3> svd(S, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 U = svd.matrixU();
    const Mat3 V = svd.matrixV();
    Mat3 r = V * U.transpose();
    if (r.determinant() < 0) {
      U.col(2) *= -1.0;
      r = V * U.transpose();
    }
    if (r.allFinite()) R[i] = r;
  }
  return R;
}

double energy_with(std::span<const Vec3> rest, std::span<const Vec3> def, const KnnGraph& graph,
                   const ArapWeights& aw, const std::vector<Mat3>& R) {
  double e = 0.0;
  for (std::size_t i = 0; i < graph.num_vertices(); ++i)
    for (std::size_t q = graph.row_ptr()[i]; q < graph.row_ptr()[i + 1]; ++q) {
      const std::size_t j = graph.col()[q];
      e += aw.w[q] * (ev(def[i] - def[j]) - R[i] * ev(rest[i] - rest[j])).squaredNorm();
    }
  return e;
}

}  // namespace

double arap_energy(std::span<const Vec3> rest, std::span<const Vec3> deformed, const KnnGraph& graph,
                   const LaplacianPair& pair) {
  const auto aw = slot_weights(graph, pair);
  return energy_with(rest, deformed, graph, aw, fit_rotations(rest, deformed, graph, aw));
}

ArapResult arap_deform(std::span<const Vec3> rest, const KnnGraph& graph, const LaplacianPair& pair,
                       const DeformationConstraints& constraints, std::size_t iters) {
  const std::size_t n = rest.size();
  if (graph.num_vertices() != n || pair.size() != n) throw std::invalid_argument("arap: size mismatch");
  constraints.validate(n);
  const auto aw = slot_weights(graph, pair);

  std::vector<Vec3> p(rest.begin(), rest.end());
  std::vector<std::ptrdiff_t> free_index(n, 0);
  for (std::size_t k = 0; k < constraints.fixed.size(); ++k) {
    p[constraints.fixed[k]] = constraints.fixed_targets[k];
    free_index[constraints.fixed[k]] = -1;
  }
  for (std::size_t k = 0; k < constraints.handles.size(); ++k) {
    p[constraints.handles[k]] = constraints.handle_targets[k];
    free_index[constraints.handles[k]] = -1;
  }
  std::size_t nf = 0;
  for (auto& f : free_index)
    if (f == 0) f = static_cast<std::ptrdiff_t>(nf++);

  // Stiffness restricted to free rows/columns, built from the graph weights so
  // the system matches the energy exactly.
  std::vector<Eigen::Triplet<double>> trip;
  std::vector<double> diag(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = graph.row_ptr()[i]; q < graph.row_ptr()[i + 1]; ++q) {
      const std::size_t j = graph.col()[q];
      if (i == j) continue;
      diag[i] += aw.w[q];
      if (free_index[i] >= 0 && free_index[j] >= 0) trip.emplace_back(free_index[i], free_index[j], -aw.w[q]);
    }
  for (std::size_t i = 0; i < n; ++i)
    if (free_index[i] >= 0) trip.emplace_back(free_index[i], free_index[i], diag[i]);
  Eigen::SparseMatrix<double> Lff(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(nf));
  Lff.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  if (nf > 0) {
    solver.compute(Lff);
    if (solver.info() != Eigen::Success) throw SolverError("arap: free-vertex system is singular", 0.0);
  }

  ArapResult result;
  // The first global step uses identity rotations, which places the free
  // vertices by Laplacian editing before the local/global iterations.
  for (std::size_t it = 0; it <= iters; ++it) {
    const auto R = it == 0 ? std::vector<Mat3>(n, Mat3::Identity()) : fit_rotations(rest, p, graph, aw);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nf), 3);
    for (std::size_t i = 0; i < n; ++i) {
      if (free_index[i] < 0) continue;
      Eigen::Vector3d b = Eigen::Vector3d::Zero();
      for (std::size_t q = graph.row_ptr()[i]; q < graph.row_ptr()[i + 1]; ++q) {
        const std::size_t j = graph.col()[q];
        if (i == j) continue;
        b += 0.5 * aw.w[q] * (R[i] + R[j]) * ev(rest[i] - rest[j]);
        if (free_index[j] < 0) b += aw.w[q] * ev(p[j]);
      }
      rhs.row(free_index[i]) = b.transpose();
    }
    if (nf > 0) {
      const Eigen::MatrixXd x = solver.solve(rhs);
      if (!x.allFinite()) throw SolverError("arap: global step produced non-finite positions", 0.0);
      for (std::size_t i = 0; i < n; ++i)
        if (free_index[i] >= 0) p[i] = {x(free_index[i], 0), x(free_index[i], 1), x(free_index[i], 2)};
    }
    if (it == 0) continue;
    const double e = energy_with(rest, p, graph, aw, fit_rotations(rest, p, graph, aw));
    if (!result.energies.empty() && e > result.energies.back() * (1.0 + 1e-9) + 1e-12)
      throw std::logic_error("arap: energy increased from " + std::to_string(result.energies.back()) + " to " +
                             std::to_string(e));
    result.energies.push_back(e);
  }
  result.positions = std::move(p);
  return result;
}

}  // namespace pclap
