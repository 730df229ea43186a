#include "pclap/autodiff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "pclap/kernels.hpp"

namespace pclap::ad {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void add_into(Matrix& dst, const Matrix& src) {
  kernels::axpy(1.0, src.data, dst.data);
}

bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->requires_grad(v.id)) return true;
  return false;
}

Tape& same_tape(Var a, Var b) {
  require(a.tape == b.tape && a.tape != nullptr, "vars belong to different tapes");
  return *a.tape;
}

}  // namespace

// --- parameters ------------------------------------------------------------

Parameter& ParameterStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw std::invalid_argument("parameter '" + name + "' registered twice");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(init);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::kaiming_uniform(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Matrix W(fan_in, fan_out);
  for (double& v : W.data) v = rng.uniform(-bound, bound);
  return add(name, std::move(W));
}

Parameter& ParameterStore::uniform(const std::string& name, std::size_t rows, std::size_t cols, double bound,
                                   Rng& rng) {
  Matrix W(rows, cols);
  for (double& v : W.data) v = rng.uniform(-bound, bound);
  return add(name, std::move(W));
}

Parameter& ParameterStore::constant(const std::string& name, std::size_t rows, std::size_t cols, double value) {
  return add(name, Matrix(rows, cols, value));
}

Parameter& ParameterStore::get(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return *p;
  throw std::out_of_range("no parameter named '" + name + "'");
}

const Parameter& ParameterStore::get(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->get(name);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p->name == name; });
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (!p->grad.same_shape(p->value)) p->grad = Matrix(p->value.rows, p->value.cols);
    std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
  }
}

double ParameterStore::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_)
    for (double g : p->grad.data) s += g * g;
  return std::sqrt(s);
}

void AdamW::step(Parameter& p) const {
  if (!p.grad.same_shape(p.value)) throw std::runtime_error("AdamW: parameter '" + p.name + "' has no gradient");
  if (!p.moment1.same_shape(p.value)) {
    p.moment1 = Matrix(p.value.rows, p.value.cols);
    p.moment2 = Matrix(p.value.rows, p.value.cols);
  }
  ++p.step;
  const double t = static_cast<double>(p.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    double& theta = p.value.data[i];
    const double g = p.grad.data[i];
    theta -= lr * weight_decay * theta;
    double& m = p.moment1.data[i];
    double& v = p.moment2.data[i];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    theta -= lr * (m / c1) / (std::sqrt(v / c2) + eps);
  }
}

void AdamW::step(ParameterStore& params) const {
  for (auto& p : params.all()) step(*p);
}

namespace {

void write_blob(const Matrix& m, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

void read_blob(Matrix& m, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  if (!in || in.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("checkpoint blob has the wrong size: " + path.string());
}

std::string blob_name(const std::string& param) {
  std::string s = param;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '.';
  return s + ".f64";
}

}  // namespace

void save_checkpoint(const ParameterStore& params, const std::filesystem::path& dir, const std::string& extra_json) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "pclap-checkpoint";
  manifest["version"] = 1;
  auto& list = manifest["parameters"] = nlohmann::json::array();
  for (const auto& p : params.all()) {
    const std::string file = blob_name(p->name);
    list.push_back({{"name", p->name},
                    {"shape", {p->value.rows, p->value.cols}},
                    {"file", file},
                    {"step", p->step}});
    write_blob(p->value, dir / file);
  }
  manifest["extra"] = nlohmann::ordered_json::parse(extra_json);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

namespace {
nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  auto j = nlohmann::json::parse(in);
  if (j.value("format", "") != "pclap-checkpoint") throw std::runtime_error("not a checkpoint: " + dir.string());
  return j;
}
}  // namespace

std::string load_checkpoint(ParameterStore& params, const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  const auto& list = manifest.at("parameters");
  if (list.size() != params.size())
    throw std::runtime_error("checkpoint has " + std::to_string(list.size()) + " parameters, model has " +
                             std::to_string(params.size()));
  for (const auto& entry : list) {
    Parameter& p = params.get(entry.at("name").get<std::string>());
    const auto shape = entry.at("shape");
    if (shape[0].get<std::size_t>() != p.value.rows || shape[1].get<std::size_t>() != p.value.cols)
      throw std::runtime_error("shape mismatch for parameter '" + p.name + "'");
    read_blob(p.value, dir / entry.at("file").get<std::string>());
    p.step = entry.at("step").get<std::uint64_t>();
  }
  return manifest.at("extra").dump();
}

std::string read_checkpoint_extra(const std::filesystem::path& dir) { return read_manifest(dir).at("extra").dump(); }

// --- tape ------------------------------------------------------------------

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }

void check_finite(const Matrix& m, const char* op) {
  // A double is NaN or infinite exactly when all exponent bits are set. The
  // integer OR-reduction vectorizes, unlike a floating-point test.
  constexpr std::uint64_t kExp = 0x7FF0000000000000ull;
  std::uint64_t bad = 0;
  for (double v : m.data) bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(v) & kExp) == kExp);
  if (bad) throw std::runtime_error(std::string("non-finite value produced by ") + op);
}

Var Tape::constant(Matrix value) {
  check_finite(value, "constant");
  nodes_.push_back({std::move(value), {}, {}, nullptr, false});
  return {this, nodes_.size() - 1};
}

Var Tape::leaf(Matrix value) {
  check_finite(value, "leaf");
  nodes_.push_back({std::move(value), {}, {}, nullptr, grad_enabled_});
  return {this, nodes_.size() - 1};
}

Var Tape::param(const Parameter& p) {
  nodes_.push_back({p.value, {}, {}, grad_enabled_ ? &p : nullptr, grad_enabled_});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, const char* op, std::function<void(Tape&, std::size_t)> backward, bool requires_grad) {
  check_finite(value, op);
  nodes_.push_back({std::move(value), {}, requires_grad ? std::move(backward) : nullptr, nullptr, requires_grad});
  return {this, nodes_.size() - 1};
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value) || n.grad.data.empty()) n.grad = Matrix(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward: root belongs to another tape");
  if (backward_done_) throw std::logic_error("backward: tape already differentiated");
  if (!(value(root.id).rows == 1 && value(root.id).cols == 1)) throw std::invalid_argument("backward: root must be 1x1");
  backward_done_ = true;
  grad_buffer(root.id)(0, 0) = 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.data.empty()) {
      n.backward(*this, id);
      check_finite(nodes_[id].grad, "backward");
    }
  }
}

void Tape::accumulate_parameter_grads() const {
  for (const Node& n : nodes_) {
    if (!n.param || n.grad.data.empty()) continue;
    auto* p = const_cast<Parameter*>(n.param);
    if (!p->grad.same_shape(p->value)) p->grad = Matrix(p->value.rows, p->value.cols);
    add_into(p->grad, n.grad);
  }
}

// --- ops -------------------------------------------------------------------

Var matmul(Var x, Var W) {
  Tape& t = same_tape(x, W);
  const Matrix& X = x.value();
  const Matrix& Wm = W.value();
  require(X.cols == Wm.rows, "matmul: shape mismatch " + X.shape_string() + " * " + Wm.shape_string());
  Matrix out(X.rows, Wm.cols);
  kernels::active().gemm_nn(X.rows, X.cols, Wm.cols, X.data.data(), Wm.data.data(), out.data.data());
  return t.record(std::move(out), "matmul", [x, W](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& X = t.value(x.id);
    const Matrix& Wm = t.value(W.id);
    if (t.requires_grad(x.id))
      kernels::active().gemm_nt(g.rows, g.cols, Wm.rows, g.data.data(), Wm.data.data(), t.grad_buffer(x.id).data.data());
    if (t.requires_grad(W.id))
      kernels::active().gemm_tn(X.rows, X.cols, g.cols, X.data.data(), g.data.data(), t.grad_buffer(W.id).data.data());
  }, any_grad({x, W}));
}

Var add_bias(Var x, Var b) {
  Tape& t = same_tape(x, b);
  const Matrix& X = x.value();
  require(b.value().rows == 1 && b.value().cols == X.cols, "add_bias: bias must be 1x" + std::to_string(X.cols));
  Matrix out = X;
  const auto bv = b.value().row(0);
  for (std::size_t i = 0; i < out.rows; ++i) kernels::axpy(1.0, bv, out.row(i));
  return t.record(std::move(out), "add_bias", [x, b](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    if (t.requires_grad(x.id)) add_into(t.grad_buffer(x.id), g);
    if (t.requires_grad(b.id)) {
      auto gb = t.grad_buffer(b.id).row(0);
      for (std::size_t i = 0; i < g.rows; ++i) kernels::axpy(1.0, g.row(i), gb);
    }
  }, any_grad({x, b}));
}

Var linear(Var x, Var W, Var b) { return add_bias(matmul(x, W), b); }
Var linear(Var x, Var W) { return matmul(x, W); }

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Matrix out = a.value();
  add_into(out, b.value());
  return t.record(std::move(out), "add", [a, b](Tape& t, std::size_t o) {
    if (t.requires_grad(a.id)) add_into(t.grad_buffer(a.id), t.grad(o));
    if (t.requires_grad(b.id)) add_into(t.grad_buffer(b.id), t.grad(o));
  }, any_grad({a, b}));
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "sub: shape mismatch");
  Matrix out = a.value();
  kernels::axpy(-1.0, b.value().data, out.data);
  return t.record(std::move(out), "sub", [a, b](Tape& t, std::size_t o) {
    if (t.requires_grad(a.id)) add_into(t.grad_buffer(a.id), t.grad(o));
    if (t.requires_grad(b.id)) kernels::axpy(-1.0, t.grad(o).data, t.grad_buffer(b.id).data);
  }, any_grad({a, b}));
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return t.record(std::move(out), "mul", [a, b](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    if (t.requires_grad(a.id)) {
      Matrix& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * t.value(b.id).data[i];
    }
    if (t.requires_grad(b.id)) {
      Matrix& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * t.value(a.id).data[i];
    }
  }, any_grad({a, b}));
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.data) v *= s;
  return a.tape->record(std::move(out), "scale", [a, s](Tape& t, std::size_t o) {
    kernels::axpy(s, t.grad(o).data, t.grad_buffer(a.id).data);
  }, any_grad({a}));
}

Var square(Var a) {
  Matrix out = a.value();
  for (double& v : out.data) v *= v;
  return a.tape->record(std::move(out), "square", [a](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& x = t.value(a.id);
    Matrix& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += 2.0 * x.data[i] * g.data[i];
  }, any_grad({a}));
}

Var relu(Var x) {
  Matrix out = x.value();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return x.tape->record(std::move(out), "relu", [x](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& xv = t.value(x.id);
    Matrix& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv.data[i] > 0.0) gx.data[i] += g.data[i];
  }, any_grad({x}));
}

Var softplus(Var x) {
  Matrix out = x.value();
  for (double& v : out.data) v = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  return x.tape->record(std::move(out), "softplus", [x](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& xv = t.value(x.id);
    Matrix& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv.data[i];
      const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      gx.data[i] += g.data[i] * sig;
    }
  }, any_grad({x}));
}

Var group_norm(Var x, std::size_t groups, Var gamma, Var beta, double eps) {
  Tape& t = same_tape(x, gamma);
  const Matrix& X = x.value();
  const std::size_t n = X.rows, c = X.cols;
  require(groups > 0 && c % groups == 0,
          "group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  require(gamma.value().rows == 1 && gamma.value().cols == c && beta.value().same_shape(gamma.value()),
          "group_norm: affine parameters must be 1x" + std::to_string(c));
  const std::size_t gs = c / groups;
  // Normalized values and inverse deviations are kept for the backward pass.
  auto xhat = std::make_shared<Matrix>(n, c);
  auto inv_std = std::make_shared<std::vector<double>>(n * groups);
  Matrix out(n, c);
  const auto gm = gamma.value().row(0), bt = beta.value().row(0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xr = X.row(i);
    auto hr = xhat->row(i);
    auto yr = out.row(i);
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t lo = g * gs;
      double mu = 0.0;
      for (std::size_t q = lo; q < lo + gs; ++q) mu += xr[q];
      mu /= static_cast<double>(gs);
      double var = 0.0;
      for (std::size_t q = lo; q < lo + gs; ++q) var += (xr[q] - mu) * (xr[q] - mu);
      var /= static_cast<double>(gs);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[i * groups + g] = is;
      for (std::size_t q = lo; q < lo + gs; ++q) {
        hr[q] = (xr[q] - mu) * is;
        yr[q] = gm[q] * hr[q] + bt[q];
      }
    }
  }
  return t.record(std::move(out), "group_norm", [x, gamma, beta, groups, gs, xhat, inv_std](Tape& t, std::size_t o) {
    const Matrix& G = t.grad(o);
    const std::size_t n = G.rows, c = G.cols;
    if (t.requires_grad(gamma.id) || t.requires_grad(beta.id)) {
      Matrix& gg = t.grad_buffer(gamma.id);
      Matrix& gb = t.grad_buffer(beta.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < c; ++q) {
          gg.data[q] += G(i, q) * (*xhat)(i, q);
          gb.data[q] += G(i, q);
        }
    }
    if (!t.requires_grad(x.id)) return;
    Matrix& gx = t.grad_buffer(x.id);
    const auto gm = t.value(gamma.id).row(0);
    const double inv_gs = 1.0 / static_cast<double>(gs);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t lo = g * gs;
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t q = lo; q < lo + gs; ++q) {
          const double dh = G(i, q) * gm[q];
          s1 += dh;
          s2 += dh * (*xhat)(i, q);
        }
        const double is = (*inv_std)[i * groups + g];
        for (std::size_t q = lo; q < lo + gs; ++q) {
          const double dh = G(i, q) * gm[q];
          gx(i, q) += is * (dh - inv_gs * s1 - (*xhat)(i, q) * inv_gs * s2);
        }
      }
  }, any_grad({x, gamma, beta}));
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  require(A.rows == B.rows, "concat_cols: row count mismatch");
  Matrix out(A.rows, A.cols + B.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    std::copy(A.row(i).begin(), A.row(i).end(), out.row(i).begin());
    std::copy(B.row(i).begin(), B.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(A.cols));
  }
  return t.record(std::move(out), "concat_cols", [a, b](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const std::size_t ca = t.value(a.id).cols, cb = t.value(b.id).cols;
    if (t.requires_grad(a.id)) {
      Matrix& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.rows; ++i) kernels::axpy(1.0, g.row(i).subspan(0, ca), ga.row(i));
    }
    if (t.requires_grad(b.id)) {
      Matrix& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.rows; ++i) kernels::axpy(1.0, g.row(i).subspan(ca, cb), gb.row(i));
    }
  }, any_grad({a, b}));
}

Var gather_rows(Var x, std::span<const std::size_t> index) {
  const Matrix& X = x.value();
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  Matrix out(idx->size(), X.cols);
  for (std::size_t e = 0; e < idx->size(); ++e) {
    if ((*idx)[e] >= X.rows) throw std::out_of_range("gather_rows: index out of range");
    std::copy(X.row((*idx)[e]).begin(), X.row((*idx)[e]).end(), out.row(e).begin());
  }
  return x.tape->record(std::move(out), "gather_rows", [x, idx](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    Matrix& gx = t.grad_buffer(x.id);
    for (std::size_t e = 0; e < idx->size(); ++e) kernels::axpy(1.0, g.row(e), gx.row((*idx)[e]));
  }, any_grad({x}));
}

Var scatter_sum(Var x, std::span<const std::size_t> index, std::size_t n) {
  const Matrix& X = x.value();
  require(index.size() == X.rows, "scatter_sum: one target per message required");
  auto idx = std::make_shared<std::vector<std::size_t>>(index.begin(), index.end());
  Matrix out(n, X.cols);
  for (std::size_t e = 0; e < idx->size(); ++e) {
    if ((*idx)[e] >= n) throw std::out_of_range("scatter_sum: target index out of range");
    kernels::axpy(1.0, X.row(e), out.row((*idx)[e]));
  }
  return x.tape->record(std::move(out), "scatter_sum", [x, idx](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    Matrix& gx = t.grad_buffer(x.id);
    for (std::size_t e = 0; e < idx->size(); ++e) kernels::axpy(1.0, g.row((*idx)[e]), gx.row(e));
  }, any_grad({x}));
}

namespace {
void csr_times_dense(const SparseMatrix& A, const Matrix& X, Matrix& out) {
  const auto& rp = A.row_ptr();
  const auto& col = A.col();
  const auto& val = A.values();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t q = rp[i]; q < rp[i + 1]; ++q) kernels::axpy(val[q], X.row(col[q]), o);
  }
}
}  // namespace

Var sparse_matmul(const SparseMatrix& A, Var x, bool symmetric) {
  const Matrix& X = x.value();
  require(A.cols() == X.rows, "sparse_matmul: shape mismatch");
  Matrix out(A.rows(), X.cols);
  csr_times_dense(A, X, out);
  const bool rg = any_grad({x});
  // The caller keeps A alive for the tape's lifetime when it is symmetric.
  std::shared_ptr<const SparseMatrix> At;
  if (rg) At = symmetric ? std::shared_ptr<const SparseMatrix>(&A, [](const SparseMatrix*) {})
                         : std::make_shared<const SparseMatrix>(A.transpose());
  return x.tape->record(std::move(out), "sparse_matmul", [x, At](Tape& t, std::size_t o) {
    csr_times_dense(*At, t.grad(o), t.grad_buffer(x.id));
  }, rg);
}

Var pool_mean(Var x, std::span<const std::size_t> mapping, std::span<const std::size_t> counts) {
  const Matrix& X = x.value();
  require(mapping.size() == X.rows, "pool_mean: mapping size mismatch");
  auto map = std::make_shared<std::vector<std::size_t>>(mapping.begin(), mapping.end());
  auto inv = std::make_shared<std::vector<double>>(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    require(counts[c] > 0, "pool_mean: empty group");
    (*inv)[c] = 1.0 / static_cast<double>(counts[c]);
  }
  Matrix out(counts.size(), X.cols);
  for (std::size_t i = 0; i < X.rows; ++i) {
    if ((*map)[i] >= counts.size()) throw std::out_of_range("pool_mean: group index out of range");
    kernels::axpy((*inv)[(*map)[i]], X.row(i), out.row((*map)[i]));
  }
  return x.tape->record(std::move(out), "pool_mean", [x, map, inv](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    Matrix& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < map->size(); ++i) kernels::axpy((*inv)[(*map)[i]], g.row((*map)[i]), gx.row(i));
  }, any_grad({x}));
}

Var unpool(Var x, std::span<const std::size_t> mapping) { return gather_rows(x, mapping); }

Var edge_laplacian(Var w, Var F, std::span<const std::size_t> ei, std::span<const std::size_t> ej) {
  Tape& t = same_tape(w, F);
  const Matrix& W = w.value();
  const Matrix& X = F.value();
  require(W.cols == 1 && W.rows == ei.size() && ej.size() == ei.size(), "edge_laplacian: one weight per edge required");
  auto I = std::make_shared<std::vector<std::size_t>>(ei.begin(), ei.end());
  auto J = std::make_shared<std::vector<std::size_t>>(ej.begin(), ej.end());
  const std::size_t p = X.cols;
  Matrix out(X.rows, p);
  std::vector<double> diff(p);
  for (std::size_t e = 0; e < I->size(); ++e) {
    const std::size_t i = (*I)[e], j = (*J)[e];
    if (i >= X.rows || j >= X.rows) throw std::out_of_range("edge_laplacian: vertex index out of range");
    const auto fi = X.row(i), fj = X.row(j);
    for (std::size_t c = 0; c < p; ++c) diff[c] = fi[c] - fj[c];
    kernels::axpy(W.data[e], diff, out.row(i));
    kernels::axpy(-W.data[e], diff, out.row(j));
  }
  return t.record(std::move(out), "edge_laplacian", [w, F, I, J](Tape& t, std::size_t o) {
    const Matrix& G = t.grad(o);
    const Matrix& X = t.value(F.id);
    const Matrix& W = t.value(w.id);
    const std::size_t p = X.cols;
    std::vector<double> dg(p), df(p);
    Matrix* gw = t.requires_grad(w.id) ? &t.grad_buffer(w.id) : nullptr;
    Matrix* gf = t.requires_grad(F.id) ? &t.grad_buffer(F.id) : nullptr;
    for (std::size_t e = 0; e < I->size(); ++e) {
      const std::size_t i = (*I)[e], j = (*J)[e];
      const auto gi = G.row(i), gj = G.row(j);
      for (std::size_t c = 0; c < p; ++c) dg[c] = gi[c] - gj[c];
      if (gw) {
        const auto fi = X.row(i), fj = X.row(j);
        for (std::size_t c = 0; c < p; ++c) df[c] = fi[c] - fj[c];
        gw->data[e] += kernels::dot(dg, df);
      }
      if (gf) {
        kernels::axpy(W.data[e], dg, gf->row(i));
        kernels::axpy(-W.data[e], dg, gf->row(j));
      }
    }
  }, any_grad({w, F}));
}

Var div_rows(Var x, Var m) {
  Tape& t = same_tape(x, m);
  const Matrix& X = x.value();
  require(m.value().cols == 1 && m.value().rows == X.rows, "div_rows: divisor must be n x 1");
  Matrix out = X;
  for (std::size_t i = 0; i < X.rows; ++i) {
    const double inv = 1.0 / m.value().data[i];
    for (double& v : out.row(i)) v *= inv;
  }
  return t.record(std::move(out), "div_rows", [x, m](Tape& t, std::size_t o) {
    const Matrix& G = t.grad(o);
    const Matrix& Y = t.value(o);
    const Matrix& mv = t.value(m.id);
    Matrix* gx = t.requires_grad(x.id) ? &t.grad_buffer(x.id) : nullptr;
    Matrix* gm = t.requires_grad(m.id) ? &t.grad_buffer(m.id) : nullptr;
    for (std::size_t i = 0; i < G.rows; ++i) {
      const double inv = 1.0 / mv.data[i];
      if (gx) kernels::axpy(inv, G.row(i), gx->row(i));
      if (gm) gm->data[i] -= inv * kernels::dot(G.row(i), Y.row(i));
    }
  }, any_grad({x, m}));
}

Var normalize_mean(Var m) {
  const Matrix& M = m.value();
  require(M.cols == 1 && M.rows > 0, "normalize_mean: expects an n x 1 column");
  double s = 0.0;
  for (double v : M.data) s += v;
  const double mu = s / static_cast<double>(M.rows);
  require(mu > 0.0, "normalize_mean: mean must be positive");
  Matrix out = M;
  for (double& v : out.data) v /= mu;
  return m.tape->record(std::move(out), "normalize_mean", [m, mu](Tape& t, std::size_t o) {
    const Matrix& G = t.grad(o);
    const Matrix& Y = t.value(o);
    const double n = static_cast<double>(G.rows);
    const double gy = kernels::dot(G.data, Y.data);
    Matrix& gm = t.grad_buffer(m.id);
    for (std::size_t i = 0; i < G.rows; ++i) gm.data[i] += (G.data[i] - gy / n) / mu;
  }, any_grad({m}));
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  return x.tape->record(Matrix(1, 1, s), "sum", [x](Tape& t, std::size_t o) {
    const double g = t.grad(o)(0, 0);
    for (double& v : t.grad_buffer(x.id).data) v += g;
  }, any_grad({x}));
}

Var mean(Var x) {
  require(x.value().size() > 0, "mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var weighted_column_sumsq(Var x, std::span<const double> weights) {
  const Matrix& X = x.value();
  require(weights.size() == X.cols, "weighted_column_sumsq: one weight per column required");
  auto wv = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  double s = 0.0;
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t c = 0; c < X.cols; ++c) s += (*wv)[c] * X(i, c) * X(i, c);
  return x.tape->record(Matrix(1, 1, s), "weighted_column_sumsq", [x, wv](Tape& t, std::size_t o) {
    const double g = t.grad(o)(0, 0);
    const Matrix& X = t.value(x.id);
    Matrix& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < X.rows; ++i)
      for (std::size_t c = 0; c < X.cols; ++c) gx(i, c) += 2.0 * g * (*wv)[c] * X(i, c);
  }, any_grad({x}));
}

// --- gradient checking -----------------------------------------------------

GradcheckResult gradcheck(const std::function<Var(Tape&, std::span<const Var>)>& f, std::vector<Matrix> inputs,
                          double h, std::uint64_t seed) {
  Matrix probe;
  auto objective = [&](const std::vector<Matrix>& xs, bool with_grad, std::vector<Matrix>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& x : xs) vars.push_back(tape.leaf(x));
    const Var out = f(tape, vars);
    if (probe.data.empty()) {
      Rng rng(seed);
      probe = Matrix(out.rows(), out.cols());
      for (double& v : probe.data) v = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    }
    const Var r = sum(mul(out, tape.constant(probe)));
    if (with_grad) {
      tape.backward(r);
      for (const Var& v : vars)
        grads->push_back(v.grad().data.empty() ? Matrix(v.rows(), v.cols()) : v.grad());
    }
    return r.value()(0, 0);
  };
  std::vector<Matrix> analytic;
  objective(inputs, true, &analytic);

  GradcheckResult res;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    Matrix numeric(inputs[a].rows, inputs[a].cols);
    for (std::size_t q = 0; q < inputs[a].size(); ++q) {
      const double x0 = inputs[a].data[q];
      inputs[a].data[q] = x0 + h;
      const double fp = objective(inputs, false, nullptr);
      inputs[a].data[q] = x0 - h;
      const double fm = objective(inputs, false, nullptr);
      inputs[a].data[q] = x0;
      numeric.data[q] = (fp - fm) / (2.0 * h);
    }
    double scale = 0.0;
    for (double v : numeric.data) scale = std::max(scale, std::abs(v));
    for (std::size_t q = 0; q < numeric.size(); ++q) {
      const double an = analytic[a].data[q], nu = numeric.data[q];
      const double err = std::abs(an - nu);
      // Entries far below the largest gradient are compared against a floor
      // tied to that scale, where finite differences lose relative accuracy.
      const double denom = std::max({std::abs(an), std::abs(nu), 1e-3 * scale, 1e-12});
      res.max_abs_error = std::max(res.max_abs_error, err);
      res.max_rel_error = std::max(res.max_rel_error, err / denom);
    }
  }
  return res;
}

}  // namespace pclap::ad
