#pragma once

// Graph U-Net predicting per-edge stiffness weights and per-vertex masses
// from a KNN graph.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pclap/autodiff.hpp"
#include "pclap/knn_graph.hpp"
#include "pclap/laplacian.hpp"

namespace pclap {

struct ModelConfig {
  std::array<std::size_t, 3> enc_channels{32, 32, 32};
  std::array<std::size_t, 3> dec_channels{64, 64, 128};
  std::array<std::size_t, 3> blocks{2, 2, 2};
  std::size_t feature_dim = 64;
  std::size_t mlp_hidden = 256;
  std::size_t k = 8;
  double first_voxel = 1.0 / 16.0;
  std::size_t groups = 8;

  static ModelConfig desk() { return {}; }
  static ModelConfig paper();

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Per-directed-edge relative geometry aggregated per vertex:
// row i = sum over non-self neighbors j of (x_i - x_j, |x_i - x_j|).
Matrix edge_geometry_sums(const KnnGraph& graph);

// Row i = (1, 1, 1, degree_i / k).
Matrix input_signal(const KnnGraph& graph);

// Unweighted adjacency without self-loops.
SparseMatrix adjacency_matrix(const KnnGraph& graph);

// Graph-dependent constants for one forward pass.
struct GraphInput {
  const KnnGraph* graph = nullptr;
  std::vector<CoarseningLevel> hierarchy;  // level l -> l+1
  std::array<SparseMatrix, 3> adjacency;
  std::array<Matrix, 3> geometry;
  Matrix signal;
  std::vector<std::size_t> edge_i, edge_j;  // undirected edges of the finest level
};

GraphInput prepare_graph(const KnnGraph& graph, const ModelConfig& config);

// out = p W0 + sum_{j in N(i)} W1 [p_j, v_ij, l_ij], evaluated as
// p W0 + (A p) W1p + G W1g.
ad::Var graph_conv(ad::Var p, const SparseMatrix& adjacency, const Matrix& geometry_sums, ad::Var W0, ad::Var W1p,
                   ad::Var W1g);

struct ModelOutput {
  ad::Var edge_weights;  // E x 1, undirected edges of the graph
  ad::Var masses;        // n x 1, mean 1
  ad::Var features;      // n x feature_dim
};

class LaplacianModel {
 public:
  LaplacianModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  ModelOutput forward(ad::Tape& tape, const GraphInput& input) const;
  LaplacianPair predict(const KnnGraph& graph) const;

  void save(const std::filesystem::path& dir, const std::string& extra_json = "{}") const;
  static LaplacianModel load(const std::filesystem::path& dir);

 private:
  struct Conv {
    const ad::Parameter *W0, *W1p, *W1g;
  };
  struct Norm {
    const ad::Parameter *gamma, *beta;
  };
  struct ResBlock {
    Conv c1, c2;
    Norm n1, n2;
    const ad::Parameter* shortcut = nullptr;
  };
  struct Dense {
    const ad::Parameter *W, *b;
  };

  Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng);
  Norm make_norm(const std::string& name, std::size_t c);
  ResBlock make_block(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng);
  Dense make_dense(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng, double weight_scale = 1.0,
                   double bias = 0.0);

  ad::Var conv(ad::Tape& t, const Conv& c, ad::Var p, const GraphInput& in, std::size_t level) const;
  ad::Var norm(ad::Tape& t, const Norm& n, ad::Var x) const;
  ad::Var block(ad::Tape& t, const ResBlock& b, ad::Var x, const GraphInput& in, std::size_t level) const;
  ad::Var dense(ad::Tape& t, const Dense& d, ad::Var x) const;

  ModelConfig config_;
  std::uint64_t seed_;
  ad::ParameterStore params_;
  Conv stem_conv_;
  Norm stem_norm_;
  std::array<std::vector<ResBlock>, 3> encoder_, decoder_;
  Dense feature_head_, edge1_, edge2_, mass1_, mass2_;
};

}  // namespace pclap
