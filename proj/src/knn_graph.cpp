#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <queue>
#include <tuple>

#include "pclap/knn_graph.hpp"
#include "pclap/parallel.hpp"

namespace pclap {
namespace {

struct Candidate {
  double dist2;
  std::size_t index;
  bool operator<(const Candidate& o) const { return std::tie(dist2, index) < std::tie(o.dist2, o.index); }
};

// Max-heap keeping the k best candidates under (dist2, index) order.
class BestK {
 public:
  explicit BestK(std::size_t k) : k_(k) {}
  void offer(double d2, std::size_t idx) {
    const Candidate c{d2, idx};
    if (heap_.size() < k_) {
      heap_.push(c);
    } else if (c < heap_.top()) {
      heap_.pop();
      heap_.push(c);
    }
  }
  bool full() const { return heap_.size() == k_; }
  double worst() const { return heap_.top().dist2; }
  std::vector<std::size_t> sorted() {
    std::vector<Candidate> items;
    while (!heap_.empty()) {
      items.push_back(heap_.top());
      heap_.pop();
    }
    std::sort(items.begin(), items.end());
    std::vector<std::size_t> out;
    for (const auto& c : items) out.push_back(c.index);
    return out;
  }

 private:
  std::size_t k_;
  std::priority_queue<Candidate> heap_;
};

constexpr std::size_t kLeafSize = 8;

}  // namespace

std::vector<std::size_t> brute_force_nearest(std::span<const Vec3> points, std::size_t query, std::size_t k) {
  std::vector<Candidate> all;
  for (std::size_t j = 0; j < points.size(); ++j)
    if (j != query) all.push_back({norm2(points[j] - points[query]), j});
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t q = 0; q < std::min(k, all.size()); ++q) out.push_back(all[q].index);
  return out;
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()), order_(points.size()) {
  std::iota(order_.begin(), order_.end(), 0);
  if (points_.size() >= kBruteForceBelow) build(0, points_.size());
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;
  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::size_t q = begin; q < end; ++q)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], points_[order_[q]][a]);
      hi[a] = std::max(hi[a], points_[order_[q]][a]);
    }
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::size_t a, std::size_t b) {
                     return std::make_pair(points_[a][axis], a) < std::make_pair(points_[b][axis], b);
                   });
  const double split = points_[order_[mid]][axis];
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<std::size_t> KdTree::nearest(std::size_t query, std::size_t k) const {
  if (nodes_.empty()) return brute_force_nearest(points_, query, k);
  const Vec3 p = points_[query];
  BestK best(k);
  // Depth-first with near child first; prune only when the splitting plane is
  // strictly farther than the current k-th distance so ties are still seen.
  std::vector<std::pair<std::size_t, double>> stack{{0, 0.0}};
  while (!stack.empty()) {
    const auto [id, plane_d2] = stack.back();
    stack.pop_back();
    if (best.full() && plane_d2 > best.worst()) continue;
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::size_t q = node.begin; q < node.end; ++q) {
        const std::size_t j = order_[q];
        if (j != query) best.offer(norm2(points_[j] - p), j);
      }
      continue;
    }
    const double diff = p[node.axis] - node.split;
    const std::size_t near = diff < 0 ? node.left : node.right;
    const std::size_t far = diff < 0 ? node.right : node.left;
    stack.push_back({far, std::max(plane_d2, diff * diff)});
    stack.push_back({near, plane_d2});
  }
  return best.sorted();
}

KnnGraph::KnnGraph(std::vector<Vec3> positions, std::vector<std::vector<std::size_t>> neighbors, std::size_t k)
    : positions_(std::move(positions)), k_(k) {
  const std::size_t n = positions_.size();
  if (neighbors.size() != n) throw std::invalid_argument("KnnGraph: neighbor list count mismatch");
  row_ptr_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& nb = neighbors[i];
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    nb.erase(std::remove(nb.begin(), nb.end(), i), nb.end());
    row_ptr_[i + 1] = row_ptr_[i] + nb.size();
  }
  col_.reserve(row_ptr_[n]);
  for (auto& nb : neighbors) col_.insert(col_.end(), nb.begin(), nb.end());
  slot_edge_.assign(col_.size(), 0);
  std::vector<std::size_t> cursor(row_ptr_.begin(), row_ptr_.end() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q) {
      const std::size_t j = col_[q];
      if (j >= n) throw std::out_of_range("KnnGraph: neighbor index out of range");
      if (i < j) {
        slot_edge_[q] = edges_.size();
        edges_.push_back({i, j});
      }
    }
  }
  // Second pass: slots with i > j take the id assigned at (j, i).
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = row_ptr_[i]; q < row_ptr_[i + 1]; ++q) {
      const std::size_t j = col_[q];
      if (i < j) continue;
      const auto& nb = neighbors[j];
      const auto it = std::lower_bound(nb.begin(), nb.end(), i);
      if (it == nb.end() || *it != i) throw std::invalid_argument("KnnGraph: neighbor lists are not symmetric");
      slot_edge_[q] = slot_edge_[row_ptr_[j] + static_cast<std::size_t>(it - nb.begin())];
    }
  }
}

std::vector<std::size_t> KnnGraph::degrees() const {
  std::vector<std::size_t> d(num_vertices());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = degree(i);
  return d;
}

bool KnnGraph::has_edge(std::size_t i, std::size_t j) const {
  if (i == j) return i < num_vertices();
  const auto nb = neighbors(i);
  return std::binary_search(nb.begin(), nb.end(), j);
}

std::vector<std::pair<std::size_t, std::size_t>> KnnGraph::edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(col_.size() + num_vertices());
  for (std::size_t i = 0; i < num_vertices(); ++i) {
    bool self_done = false;
    for (std::size_t j : neighbors(i)) {
      if (!self_done && j > i) {
        out.emplace_back(i, i);
        self_done = true;
      }
      out.emplace_back(i, j);
    }
    if (!self_done) out.emplace_back(i, i);
  }
  return out;
}

KnnGraph build_knn(std::span<const Vec3> points, std::size_t k) {
  const std::size_t n = points.size();
  if (k == 0) throw std::invalid_argument("build_knn: k must be positive");
  if (n < k + 1)
    throw std::invalid_argument("build_knn: need at least k+1 = " + std::to_string(k + 1) + " points, got " +
                                std::to_string(n));
  for (const Vec3& p : points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::invalid_argument("build_knn: non-finite coordinates");
  const KdTree tree(points);
  std::vector<std::vector<std::size_t>> knn(n);
  parallel_for(n, [&](std::size_t i) { knn[i] = tree.nearest(i, k); });
  std::vector<std::vector<std::size_t>> sym(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : knn[i]) {
      sym[i].push_back(j);
      sym[j].push_back(i);
    }
  return KnnGraph(std::vector<Vec3>(points.begin(), points.end()), std::move(sym), k);
}

void save_edge_list(const KnnGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [i, j] : graph.edges()) out << i << ' ' << j << '\n';
}

CoarseningLevel coarsen_by_voxel(const KnnGraph& graph, double voxel_size) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("coarsen_by_voxel: voxel_size must be positive");
  const auto& pos = graph.positions();
  const std::size_t n = pos.size();
  CoarseningLevel level;
  level.voxel_size = voxel_size;
  if (n == 0) return level;
  const Vec3 origin = bounding_box(pos).lo;
  using Key = std::tuple<long, long, long>;
  std::vector<Key> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = pos[i] - origin;
    keys[i] = {static_cast<long>(std::floor(d.x / voxel_size)), static_cast<long>(std::floor(d.y / voxel_size)),
               static_cast<long>(std::floor(d.z / voxel_size))};
  }
  std::map<Key, std::size_t> voxel_id;
  for (const Key& key : keys) voxel_id.emplace(key, 0);
  std::size_t next = 0;
  for (auto& [key, id] : voxel_id) id = next++;

  const std::size_t m = voxel_id.size();
  level.mapping.resize(n);
  level.counts.assign(m, 0);
  std::vector<Vec3> centroid(m);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = voxel_id[keys[i]];
    level.mapping[i] = c;
    level.counts[c] += 1;
    centroid[c] += pos[i];
  }
  for (std::size_t c = 0; c < m; ++c) centroid[c] /= static_cast<double>(level.counts[c]);

  std::vector<std::vector<std::size_t>> nb(m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : graph.neighbors(i)) {
      const std::size_t a = level.mapping[i], b = level.mapping[j];
      if (a != b) nb[a].push_back(b);
    }
  level.coarse = KnnGraph(std::move(centroid), std::move(nb), graph.k());
  return level;
}

std::vector<CoarseningLevel> build_hierarchy(const KnnGraph& graph, std::size_t levels, double first_voxel) {
  std::vector<CoarseningLevel> out;
  const KnnGraph* current = &graph;
  double voxel = first_voxel;
  for (std::size_t l = 0; l < levels; ++l) {
    out.push_back(coarsen_by_voxel(*current, voxel));
    current = &out.back().coarse;
    voxel *= 2.0;
  }
  return out;
}

Matrix pool_features(const CoarseningLevel& level, const Matrix& fine) {
  if (fine.rows != level.num_fine())
    throw std::invalid_argument("pool_features: expected " + std::to_string(level.num_fine()) + " rows, got " +
                                std::to_string(fine.rows));
  Matrix out(level.num_coarse(), fine.cols);
  for (std::size_t i = 0; i < fine.rows; ++i) {
    auto dst = out.row(level.mapping[i]);
    const auto src = fine.row(i);
    for (std::size_t c = 0; c < fine.cols; ++c) dst[c] += src[c];
  }
  for (std::size_t r = 0; r < out.rows; ++r) {
    const double inv = 1.0 / static_cast<double>(level.counts[r]);
    for (double& v : out.row(r)) v *= inv;
  }
  return out;
}

Matrix unpool_features(const CoarseningLevel& level, const Matrix& coarse) {
  if (coarse.rows != level.num_coarse())
    throw std::invalid_argument("unpool_features: expected " + std::to_string(level.num_coarse()) + " rows, got " +
                                std::to_string(coarse.rows));
  Matrix out(level.num_fine(), coarse.cols);
  for (std::size_t i = 0; i < out.rows; ++i) {
    const auto src = coarse.row(level.mapping[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace pclap
