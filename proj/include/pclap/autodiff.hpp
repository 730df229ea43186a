#pragma once

// Reverse-mode automatic differentiation over row-major 2-D matrices.
//
// A Tape records values and backward closures; Var is a handle into it.
// Parameters live outside the tape and receive gradients through
// Tape::accumulate_parameter_grads, so several tapes can run concurrently
// against the same read-only parameter values.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pclap/dense.hpp"
#include "pclap/random.hpp"
#include "pclap/sparse.hpp"

namespace pclap::ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;  // empty until zero_grad()
  Matrix moment1, moment2;
  std::uint64_t step = 0;
};

class ParameterStore {
 public:
  // Throws on a duplicate name.
  Parameter& add(const std::string& name, Matrix init);
  Parameter& kaiming_uniform(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  Parameter& uniform(const std::string& name, std::size_t rows, std::size_t cols, double bound, Rng& rng);
  Parameter& constant(const std::string& name, std::size_t rows, std::size_t cols, double value);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::unique_ptr<Parameter>>& all() { return params_; }
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;

  void zero_grad();
  double grad_norm() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  // Decoupled decay, then the bias-corrected Adam update. Throws when a
  // parameter has no gradient buffer.
  void step(ParameterStore& params) const;
  void step(Parameter& p) const;
};

// Checkpoint: <dir>/manifest.json plus one raw little-endian f64 blob per
// parameter. `extra` is stored verbatim under "extra" in the manifest.
void save_checkpoint(const ParameterStore& params, const std::filesystem::path& dir, const std::string& extra_json = "{}");
// Loads values into an already-initialized store with matching names and
// shapes; returns the "extra" object as a JSON string.
std::string load_checkpoint(ParameterStore& params, const std::filesystem::path& dir);
std::string read_checkpoint_extra(const std::filesystem::path& dir);

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
};

class Tape {
 public:
  Tape() = default;
  // With grad_enabled = false nothing records backward closures; used for
  // inference.
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var leaf(Matrix value);  // differentiable input without a parameter
  Var param(const Parameter& p);

  // Records an op. `backward` reads the output gradient via grad(out) and
  // accumulates into its inputs; it runs only when the output received one.
  Var record(Matrix value, const char* op, std::function<void(Tape&, std::size_t out)> backward,
             bool requires_grad = true);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  // Allocates on first use.
  Matrix& grad_buffer(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Seeds d(root)/d(root) = 1 (root must be 1x1) and runs closures in
  // reverse recording order. A tape supports one backward pass.
  void backward(Var root);
  void accumulate_parameter_grads() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, std::size_t)> backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

// Throws std::runtime_error naming `op` when m has a NaN or infinity.
void check_finite(const Matrix& m, const char* op);

// --- ops ---------------------------------------------------------------

Var matmul(Var x, Var W);
Var add_bias(Var x, Var b);  // b is 1 x c
Var linear(Var x, Var W, Var b);
Var linear(Var x, Var W);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);     // elementwise
Var scale(Var a, double s);
Var square(Var a);
Var relu(Var x);
Var softplus(Var x);
Var group_norm(Var x, std::size_t groups, Var gamma, Var beta, double eps = 1e-5);
Var concat_cols(Var a, Var b);

// out[e] = x[index[e]]
Var gather_rows(Var x, std::span<const std::size_t> index);
// out[index[e]] += x[e], n output rows
Var scatter_sum(Var x, std::span<const std::size_t> index, std::size_t n);
// Constant sparse matrix times x. A^T is formed for the backward pass unless
// A is declared symmetric, in which case A must outlive the tape.
Var sparse_matmul(const SparseMatrix& A, Var x, bool symmetric = false);
// Mean over groups of rows; mapping[i] is the group of row i.
Var pool_mean(Var x, std::span<const std::size_t> mapping, std::span<const std::size_t> counts);
// out[i] = x[mapping[i]]
Var unpool(Var x, std::span<const std::size_t> mapping);

// For undirected edges (i, j) with weights w (E x 1):
// out = L F with L_ij = -w_ij, L_ii = sum_j w_ij.
Var edge_laplacian(Var w, Var F, std::span<const std::size_t> ei, std::span<const std::size_t> ej);
// out[i, :] = x[i, :] / m[i]
Var div_rows(Var x, Var m);
// m / mean(m)
Var normalize_mean(Var m);

Var sum(Var x);
Var mean(Var x);
// sum_c weights[c] * sum_i x[i, c]^2
Var weighted_column_sumsq(Var x, std::span<const double> weights);

// Central-difference check of d(sum(f(inputs) * probe)) / d(inputs).
struct GradcheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};
GradcheckResult gradcheck(const std::function<Var(Tape&, std::span<const Var>)>& f, std::vector<Matrix> inputs,
                          double h = 1e-6, std::uint64_t seed = 0);

}  // namespace pclap::ad
