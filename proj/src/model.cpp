#include "pclap/model.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace pclap {

using ad::Var;

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.enc_channels = {128, 128, 128};
  c.dec_channels = {256, 256, 512};
  c.blocks = {3, 2, 3};
  c.feature_dim = 256;
  return c;
}

void ModelConfig::validate() const {
  for (std::size_t l = 0; l < 3; ++l) {
    if (blocks[l] < 1) throw std::invalid_argument("ModelConfig: every level needs at least one block");
    if (enc_channels[l] % groups || dec_channels[l] % groups)
      throw std::invalid_argument("ModelConfig: channel widths must be divisible by the group count");
  }
  if (feature_dim == 0 || mlp_hidden == 0 || k == 0) throw std::invalid_argument("ModelConfig: zero width");
  if (!(first_voxel > 0)) throw std::invalid_argument("ModelConfig: first_voxel must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["enc_channels"] = enc_channels;
  j["dec_channels"] = dec_channels;
  j["blocks"] = blocks;
  j["feature_dim"] = feature_dim;
  j["mlp_hidden"] = mlp_hidden;
  j["k"] = k;
  j["first_voxel"] = first_voxel;
  j["groups"] = groups;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json) {
  const auto j = nlohmann::json::parse(json);
  ModelConfig c;
  c.enc_channels = j.at("enc_channels").get<std::array<std::size_t, 3>>();
  c.dec_channels = j.at("dec_channels").get<std::array<std::size_t, 3>>();
  c.blocks = j.at("blocks").get<std::array<std::size_t, 3>>();
  c.feature_dim = j.at("feature_dim").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.k = j.at("k").get<std::size_t>();
  c.first_voxel = j.at("first_voxel").get<double>();
  c.groups = j.at("groups").get<std::size_t>();
  c.validate();
  return c;
}

Matrix edge_geometry_sums(const KnnGraph& graph) {
  const auto& x = graph.positions();
  Matrix G(graph.num_vertices(), 4);
  for (std::size_t i = 0; i < graph.num_vertices(); ++i)
    for (std::size_t j : graph.neighbors(i)) {
      const Vec3 v = x[i] - x[j];
      G(i, 0) += v.x;
      G(i, 1) += v.y;
      G(i, 2) += v.z;
      G(i, 3) += norm(v);
    }
  return G;
}

Matrix input_signal(const KnnGraph& graph) {
  Matrix s(graph.num_vertices(), 4, 1.0);
  const double k = static_cast<double>(graph.k());
  for (std::size_t i = 0; i < graph.num_vertices(); ++i) s(i, 3) = static_cast<double>(graph.degree(i)) / k;
  return s;
}

SparseMatrix adjacency_matrix(const KnnGraph& graph) {
  return SparseMatrix(graph.num_vertices(), graph.num_vertices(), graph.row_ptr(), graph.col(),
                      std::vector<double>(graph.col().size(), 1.0));
}

GraphInput prepare_graph(const KnnGraph& graph, const ModelConfig& config) {
  if (graph.num_vertices() < 2) throw std::invalid_argument("prepare_graph: need at least two vertices");
  GraphInput in;
  in.graph = &graph;
  in.hierarchy = build_hierarchy(graph, 2, config.first_voxel);
  const KnnGraph* levels[3] = {&graph, &in.hierarchy[0].coarse, &in.hierarchy[1].coarse};
  for (std::size_t l = 0; l < 3; ++l) {
    in.adjacency[l] = adjacency_matrix(*levels[l]);
    in.geometry[l] = edge_geometry_sums(*levels[l]);
  }
  in.signal = input_signal(graph);
  for (const auto& e : graph.undirected_edges()) {
    in.edge_i.push_back(e.i);
    in.edge_j.push_back(e.j);
  }
  return in;
}

Var graph_conv(Var p, const SparseMatrix& adjacency, const Matrix& geometry_sums, Var W0, Var W1p, Var W1g) {
  ad::Tape& t = *p.tape;
  if (geometry_sums.rows != p.rows() || geometry_sums.cols != W1g.rows())
    throw std::invalid_argument("graph_conv: geometry shape mismatch");
  const Var self = ad::matmul(p, W0);
  const Var neigh = ad::matmul(ad::sparse_matmul(adjacency, p, true), W1p);
  const Var geom = ad::matmul(t.constant(geometry_sums), W1g);
  return ad::add(ad::add(self, neigh), geom);
}

// --- construction ----------------------------------------------------------

LaplacianModel::Conv LaplacianModel::make_conv(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
  // Fan-in counts the self term plus a typical neighborhood of k messages.
  const double bound = std::sqrt(6.0 / static_cast<double>(cin * (config_.k + 1)));
  auto& W0 = params_.uniform(name + ".W0", cin, cout, bound, rng);
  auto& W1p = params_.uniform(name + ".W1p", cin, cout, bound, rng);
  auto& W1g = params_.uniform(name + ".W1g", 4, cout, bound, rng);
  return {&W0, &W1p, &W1g};
}

LaplacianModel::Norm LaplacianModel::make_norm(const std::string& name, std::size_t c) {
  return {&params_.constant(name + ".gamma", 1, c, 1.0), &params_.constant(name + ".beta", 1, c, 0.0)};
}

LaplacianModel::ResBlock LaplacianModel::make_block(const std::string& name, std::size_t cin, std::size_t cout,
                                                    Rng& rng) {
  ResBlock b;
  b.c1 = make_conv(name + ".conv1", cin, cout, rng);
  b.n1 = make_norm(name + ".norm1", cout);
  b.c2 = make_conv(name + ".conv2", cout, cout, rng);
  b.n2 = make_norm(name + ".norm2", cout);
  if (cin != cout) b.shortcut = &params_.kaiming_uniform(name + ".shortcut", cin, cout, rng);
  return b;
}

LaplacianModel::Dense LaplacianModel::make_dense(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng,
                                                 double weight_scale, double bias) {
  auto& W = params_.kaiming_uniform(name + ".W", cin, cout, rng);
  for (double& v : W.value.data) v *= weight_scale;
  return {&W, &params_.constant(name + ".b", 1, cout, bias)};
}

LaplacianModel::LaplacianModel(const ModelConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  Rng rng(mix_seed(seed, 0x40DE1));
  const auto& enc = config_.enc_channels;
  const auto& dec = config_.dec_channels;
  stem_conv_ = make_conv("stem.conv", 4, enc[0], rng);
  stem_norm_ = make_norm("stem.norm", enc[0]);
  std::size_t width = enc[0];
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t b = 0; b < config_.blocks[l]; ++b) {
      encoder_[l].push_back(make_block("enc" + std::to_string(l) + "." + std::to_string(b), width, enc[l], rng));
      width = enc[l];
    }
  for (std::size_t l = 3; l-- > 0;) {
    if (l < 2) width = enc[l] + dec[l + 1];  // skip concatenated with the unpooled decoder output
    for (std::size_t b = 0; b < config_.blocks[l]; ++b) {
      decoder_[l].push_back(make_block("dec" + std::to_string(l) + "." + std::to_string(b), width, dec[l], rng));
      width = dec[l];
    }
  }
  feature_head_ = make_dense("head.features", dec[0], config_.feature_dim, rng);
  // Small output layers with positive biases keep the ReLU on edge weights
  // active and start masses near Softplus^-1(1).
  edge1_ = make_dense("head.edge1", config_.feature_dim, config_.mlp_hidden, rng);
  edge2_ = make_dense("head.edge2", config_.mlp_hidden, 1, rng, 1.0, 0.3);
  mass1_ = make_dense("head.mass1", config_.feature_dim, config_.mlp_hidden, rng);
  mass2_ = make_dense("head.mass2", config_.mlp_hidden, 1, rng, 0.1, std::log(std::expm1(1.0)));
}

// --- forward ---------------------------------------------------------------

Var LaplacianModel::conv(ad::Tape& t, const Conv& c, Var p, const GraphInput& in, std::size_t level) const {
  return graph_conv(p, in.adjacency[level], in.geometry[level], t.param(*c.W0), t.param(*c.W1p), t.param(*c.W1g));
}

Var LaplacianModel::norm(ad::Tape& t, const Norm& n, Var x) const {
  return ad::group_norm(x, config_.groups, t.param(*n.gamma), t.param(*n.beta));
}

Var LaplacianModel::block(ad::Tape& t, const ResBlock& b, Var x, const GraphInput& in, std::size_t level) const {
  Var h = ad::relu(norm(t, b.n1, conv(t, b.c1, x, in, level)));
  h = norm(t, b.n2, conv(t, b.c2, h, in, level));
  const Var s = b.shortcut ? ad::matmul(x, t.param(*b.shortcut)) : x;
  return ad::relu(ad::add(h, s));
}

Var LaplacianModel::dense(ad::Tape& t, const Dense& d, Var x) const {
  return ad::linear(x, t.param(*d.W), t.param(*d.b));
}

ModelOutput LaplacianModel::forward(ad::Tape& t, const GraphInput& in) const {
  if (!in.graph) throw std::invalid_argument("forward: unprepared graph input");
  Var x = ad::relu(norm(t, stem_norm_, conv(t, stem_conv_, t.constant(in.signal), in, 0)));
  std::array<Var, 3> skip;
  for (std::size_t l = 0; l < 3; ++l) {
    if (l > 0) x = ad::pool_mean(x, in.hierarchy[l - 1].mapping, in.hierarchy[l - 1].counts);
    for (const auto& b : encoder_[l]) x = block(t, b, x, in, l);
    skip[l] = x;
  }
  for (std::size_t l = 3; l-- > 0;) {
    if (l < 2) x = ad::concat_cols(skip[l], ad::unpool(x, in.hierarchy[l].mapping));
    for (const auto& b : decoder_[l]) x = block(t, b, x, in, l);
  }
  const Var p = dense(t, feature_head_, x);

  const Var diff = ad::square(ad::sub(ad::gather_rows(p, in.edge_i), ad::gather_rows(p, in.edge_j)));
  const Var w = ad::relu(dense(t, edge2_, ad::relu(dense(t, edge1_, diff))));
  const Var m = ad::softplus(dense(t, mass2_, ad::relu(dense(t, mass1_, p))));
  return {w, ad::normalize_mean(m), p};
}

LaplacianPair LaplacianModel::predict(const KnnGraph& graph) const {
  const GraphInput in = prepare_graph(graph, config_);
  ad::Tape tape(false);
  const ModelOutput out = forward(tape, in);
  return assemble_learned(graph, out.edge_weights.value().data, out.masses.value().data);
}

void LaplacianModel::save(const std::filesystem::path& dir, const std::string& extra_json) const {
  nlohmann::ordered_json extra;
  extra["config"] = nlohmann::ordered_json::parse(config_.to_json());
  extra["seed"] = seed_;
  extra["extra"] = nlohmann::ordered_json::parse(extra_json);
  ad::save_checkpoint(params_, dir, extra.dump());
}

LaplacianModel LaplacianModel::load(const std::filesystem::path& dir) {
  const auto extra = nlohmann::json::parse(ad::read_checkpoint_extra(dir));
  LaplacianModel model(ModelConfig::from_json(extra.at("config").dump()), extra.at("seed").get<std::uint64_t>());
  ad::load_checkpoint(model.params_, dir);
  return model;
}

}  // namespace pclap
