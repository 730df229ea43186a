#pragma once

// Symmetrized K-nearest-neighbor graphs with implicit self-loops, and the
// voxel coarsening hierarchy used for pooling.

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "pclap/dense.hpp"
#include "pclap/geometry.hpp"

namespace pclap {

// Exact k-nearest-neighbor queries. Distance ties are broken by ascending
// point index. Below 64 points queries fall back to an exhaustive scan.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  // The k nearest points to points[query], excluding the query itself,
  // ordered by (distance, index).
  std::vector<std::size_t> nearest(std::size_t query, std::size_t k) const;

  static constexpr std::size_t kBruteForceBelow = 64;

 private:
  struct Node {
    std::size_t begin, end;  // range in order_
    int axis = -1;           // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };
  std::size_t build(std::size_t begin, std::size_t end);

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

// Reference O(n^2) neighbor scan with the same ordering contract.
std::vector<std::size_t> brute_force_nearest(std::span<const Vec3> points, std::size_t query, std::size_t k);

struct UndirectedEdge {
  std::size_t i, j;  // i < j
  friend bool operator==(const UndirectedEdge&, const UndirectedEdge&) = default;
};

class KnnGraph {
 public:
  KnnGraph() = default;
  // Builds from explicit symmetric neighbor lists (self excluded).
  KnnGraph(std::vector<Vec3> positions, std::vector<std::vector<std::size_t>> neighbors, std::size_t k);

  std::size_t num_vertices() const { return positions_.size(); }
  std::size_t k() const { return k_; }
  const std::vector<Vec3>& positions() const { return positions_; }

  // Non-self neighbors of i, ascending.
  std::span<const std::size_t> neighbors(std::size_t i) const {
    return {col_.data() + row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]};
  }
  std::size_t degree(std::size_t i) const { return row_ptr_[i + 1] - row_ptr_[i]; }
  std::vector<std::size_t> degrees() const;

  // CSR over non-self neighbors.
  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col() const { return col_; }
  // For CSR slot q, the index of its undirected edge.
  const std::vector<std::size_t>& slot_edge() const { return slot_edge_; }
  const std::vector<UndirectedEdge>& undirected_edges() const { return edges_; }
  std::size_t num_directed_edges() const { return col_.size(); }

  bool has_edge(std::size_t i, std::size_t j) const;

  // All directed pairs including self-loops, sorted.
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;

 private:
  std::vector<Vec3> positions_;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_;
  std::vector<std::size_t> slot_edge_;
  std::vector<UndirectedEdge> edges_;
  std::size_t k_ = 0;
};

KnnGraph build_knn(std::span<const Vec3> points, std::size_t k = 8);
inline KnnGraph build_knn(const PointCloud& cloud, std::size_t k = 8) { return build_knn(cloud.points, k); }

void save_edge_list(const KnnGraph& graph, const std::filesystem::path& path);

struct CoarseningLevel {
  std::vector<std::size_t> mapping;  // fine vertex -> coarse vertex
  std::vector<std::size_t> counts;   // fine vertices per coarse vertex
  KnnGraph coarse;
  double voxel_size = 0.0;

  std::size_t num_fine() const { return mapping.size(); }
  std::size_t num_coarse() const { return counts.size(); }
};

// Buckets vertices by floor((p - bbox_min) / voxel_size). Coarse vertices are
// ordered by voxel coordinate and placed at the centroid of their bucket;
// coarse edges are the image of fine edges.
CoarseningLevel coarsen_by_voxel(const KnnGraph& graph, double voxel_size);

// First voxel is 1/16 of normalized space, doubling per level.
std::vector<CoarseningLevel> build_hierarchy(const KnnGraph& graph, std::size_t levels, double first_voxel = 1.0 / 16.0);

Matrix pool_features(const CoarseningLevel& level, const Matrix& fine);
Matrix unpool_features(const CoarseningLevel& level, const Matrix& coarse);

}  // namespace pclap
