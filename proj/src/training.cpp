#include "pclap/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pclap/parallel.hpp"
#include "pclap/random.hpp"

namespace pclap {

using nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <std::size_t N>
std::string join(const std::array<std::size_t, N>& a) {
  std::string s;
  for (std::size_t v : a) s += (s.empty() ? "" : ", ") + std::to_string(v);
  return s;
}

std::array<std::size_t, 3> triple(const IniFile& ini, const std::string& key, const std::array<std::size_t, 3>& fallback) {
  const auto items = ini.get_list("model", key, {});
  if (items.empty()) return fallback;
  if (items.size() != 3) throw std::invalid_argument("config: model." + key + " needs three values");
  std::array<std::size_t, 3> out{};
  for (int l = 0; l < 3; ++l) out[l] = static_cast<std::size_t>(std::stoull(items[l]));
  return out;
}

Matrix mass_column(const MassVector& m) { return Matrix(m.size(), 1, m.values()); }

ProbeSet leading_probes(const ProbeSet& set, std::size_t count) {
  count = std::min(count, set.num_probes());
  ProbeSet out{Matrix(set.num_vertices(), count), {set.meta.begin(), set.meta.begin() + count}};
  for (std::size_t i = 0; i < set.num_vertices(); ++i)
    for (std::size_t c = 0; c < count; ++c) out.values(i, c) = set.values(i, c);
  return out;
}

void check_same_size(const LaplacianPair& pred, const LaplacianPair& gt, const ProbeSet& probes, const char* what) {
  if (pred.size() != gt.size() || probes.num_vertices() != gt.size())
    throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

}  // namespace

// ---- losses ----

std::vector<double> probe_weights(const Matrix& gt_applied) {
  std::vector<double> w(gt_applied.cols, 0.0);
  for (std::size_t i = 0; i < gt_applied.rows; ++i)
    for (std::size_t c = 0; c < gt_applied.cols; ++c) w[c] += std::abs(gt_applied(i, c));
  for (double& v : w) v = 1.0 / (v / static_cast<double>(std::max<std::size_t>(gt_applied.rows, 1)) + kLossEpsilon);
  return w;
}

std::vector<double> laplacian_residuals(const LaplacianPair& pred, const LaplacianPair& gt, const ProbeSet& probes) {
  check_same_size(pred, gt, probes, "loss_laplacian");
  const Matrix a = apply_laplacian(pred, probes.values);
  const Matrix b = apply_laplacian(gt, probes.values);
  std::vector<double> r(probes.num_probes(), 0.0);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t c = 0; c < a.cols; ++c) {
      const double d = a(i, c) - b(i, c);
      r[c] += d * d;
    }
  return r;
}

double loss_laplacian(const LaplacianPair& pred, const LaplacianPair& gt, const ProbeSet& probes) {
  const auto r = laplacian_residuals(pred, gt, probes);
  const auto w = probe_weights(apply_laplacian(gt, probes.values));
  double s = 0.0;
  for (std::size_t c = 0; c < r.size(); ++c) s += w[c] * r[c];
  return s;
}

double loss_mass(std::span<const double> pred_mass, std::span<const double> gt_mass) {
  if (pred_mass.size() != gt_mass.size() || pred_mass.empty()) throw std::invalid_argument("loss_mass: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred_mass.size(); ++i) s += (pred_mass[i] - gt_mass[i]) * (pred_mass[i] - gt_mass[i]);
  return s / static_cast<double>(pred_mass.size());
}

LossVars loss_terms(const ModelOutput& out, const GraphInput& input, const LaplacianPair& gt, const ProbeSet& probes,
                    double mass_weight) {
  ad::Tape& t = *out.masses.tape;
  if (gt.size() != out.masses.rows() || probes.num_vertices() != gt.size())
    throw std::invalid_argument("loss_terms: dimension mismatch");
  const Matrix target = apply_laplacian(gt, probes.values);
  LossVars v;
  v.probe_weights = probe_weights(target);
  const auto LF = ad::edge_laplacian(out.edge_weights, t.constant(probes.values), input.edge_i, input.edge_j);
  const auto diff = ad::sub(ad::div_rows(LF, out.masses), t.constant(target));
  v.laplacian = ad::weighted_column_sumsq(diff, v.probe_weights);
  v.mass = ad::mean(ad::square(ad::sub(out.masses, t.constant(mass_column(gt.mass)))));
  v.total = ad::add(v.laplacian, ad::scale(v.mass, mass_weight));
  return v;
}

// ---- samples ----

TrainingSample make_training_sample(const ShapeRecord& record, const ModelConfig& config) {
  TrainingSample s;
  s.name = record.spec.name;
  s.category = std::string(shape_kind_name(record.spec.kind));
  s.seed = record.spec.seed;
  s.cloud = record.cloud();
  s.graph = std::make_shared<const KnnGraph>(build_knn(s.cloud, config.k));
  s.input = prepare_graph(*s.graph, config);
  s.gt = record.gt;
  s.spectral = record.spectral;
  s.eval = record.spectral;
  s.eval.append(eval_fixed_probes(s.cloud));
  return s;
}

std::vector<TrainingSample> make_training_samples(std::span<const ShapeRecord* const> records,
                                                  const ModelConfig& config) {
  std::vector<TrainingSample> out(records.size());
  parallel_for(records.size(), [&](std::size_t i) { out[i] = make_training_sample(*records[i], config); });
  return out;
}

ProbeSet training_probes(const TrainingSample& sample, std::size_t spectral_count, std::size_t epoch) {
  ProbeSet set = leading_probes(sample.spectral, spectral_count);
  set.append(spatial_probes(sample.cloud, mix_seed(sample.seed, 0x5A7 + epoch)));
  return set;
}

// ---- config ----

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.epochs = 500;
  c.batch_size = 8;
  c.spectral_probes = kSpectralProbeCount;
  c.model = ModelConfig::paper();
  return c;
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw std::invalid_argument("train: epochs and batch_size must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (weight_decay < 0 || mass_weight < 0) throw std::invalid_argument("train: negative weight");
  if (spectral_probes > kSpectralProbeCount) throw std::invalid_argument("train: too many spectral probes");
  if (checkpoint_every == 0 || eval_every == 0) throw std::invalid_argument("train: intervals must be positive");
  model.validate();
}

TrainConfig TrainConfig::from_ini(const IniFile& ini) {
  TrainConfig c = ini.get_bool("train", "paper_scale", false) ? paper() : TrainConfig{};
  auto size = [&](const char* key, std::size_t fallback) {
    return static_cast<std::size_t>(ini.get_int("train", key, static_cast<std::int64_t>(fallback)));
  };
  c.seed = static_cast<std::uint64_t>(ini.get_int("train", "seed", static_cast<std::int64_t>(c.seed)));
  c.epochs = size("epochs", c.epochs);
  c.batch_size = size("batch_size", c.batch_size);
  c.learning_rate = ini.get_double("train", "learning_rate", c.learning_rate);
  c.weight_decay = ini.get_double("train", "weight_decay", c.weight_decay);
  c.mass_weight = ini.get_double("train", "mass_weight", c.mass_weight);
  c.spectral_probes = size("spectral_probes", c.spectral_probes);
  c.checkpoint_every = size("checkpoint_every", c.checkpoint_every);
  c.eval_every = size("eval_every", c.eval_every);

  auto& m = c.model;
  m.enc_channels = triple(ini, "enc_channels", m.enc_channels);
  m.dec_channels = triple(ini, "dec_channels", m.dec_channels);
  m.blocks = triple(ini, "blocks", m.blocks);
  m.feature_dim = static_cast<std::size_t>(ini.get_int("model", "feature_dim", static_cast<std::int64_t>(m.feature_dim)));
  m.mlp_hidden = static_cast<std::size_t>(ini.get_int("model", "mlp_hidden", static_cast<std::int64_t>(m.mlp_hidden)));
  m.k = static_cast<std::size_t>(ini.get_int("model", "k", static_cast<std::int64_t>(m.k)));
  m.first_voxel = ini.get_double("model", "first_voxel", m.first_voxel);
  m.groups = static_cast<std::size_t>(ini.get_int("model", "groups", static_cast<std::int64_t>(m.groups)));
  c.validate();
  return c;
}

void TrainConfig::to_ini(IniFile& ini) const {
  ini.set("train", "seed", std::to_string(seed));
  ini.set("train", "epochs", std::to_string(epochs));
  ini.set("train", "batch_size", std::to_string(batch_size));
  ini.set("train", "learning_rate", fmt(learning_rate));
  ini.set("train", "weight_decay", fmt(weight_decay));
  ini.set("train", "mass_weight", fmt(mass_weight));
  ini.set("train", "spectral_probes", std::to_string(spectral_probes));
  ini.set("train", "checkpoint_every", std::to_string(checkpoint_every));
  ini.set("train", "eval_every", std::to_string(eval_every));
  ini.set("model", "enc_channels", join(model.enc_channels));
  ini.set("model", "dec_channels", join(model.dec_channels));
  ini.set("model", "blocks", join(model.blocks));
  ini.set("model", "feature_dim", std::to_string(model.feature_dim));
  ini.set("model", "mlp_hidden", std::to_string(model.mlp_hidden));
  ini.set("model", "k", std::to_string(model.k));
  ini.set("model", "first_voxel", fmt(model.first_voxel));
  ini.set("model", "groups", std::to_string(model.groups));
}

std::string TrainConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["mass_weight"] = mass_weight;
  j["spectral_probes"] = spectral_probes;
  j["checkpoint_every"] = checkpoint_every;
  j["eval_every"] = eval_every;
  j["model"] = ordered_json::parse(model.to_json());
  return j.dump();
}

double learning_rate_at(double lr0, std::size_t epoch, std::size_t epochs) {
  return lr0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(epochs));
}

// ---- training ----

namespace {

void write_divergence_dump(const std::filesystem::path& dir, const LaplacianModel& model, std::size_t epoch,
                           std::size_t step, const std::string& sample, const std::string& reason) {
  if (dir.empty()) return;
  ordered_json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["sample"] = sample;
  j["reason"] = reason;
  auto& norms = j["parameter_norms"] = ordered_json::object();
  for (const auto& p : model.params().all()) {
    double s = 0.0;
    for (double v : p->value.data) s += v * v;
    norms[p->name] = std::sqrt(s);
  }
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "divergence.json") << j.dump(2) << '\n';
}

double heldout_mse(const LaplacianModel& model, std::span<const TrainingSample> heldout) {
  std::vector<Evaluation> parts(heldout.size());
  parallel_for(heldout.size(), [&](std::size_t i) {
    parts[i] = evaluate(model.predict(*heldout[i].graph), heldout[i].gt, heldout[i].eval);
  });
  return combine(parts).mse;
}

}  // namespace

TrainResult train(LaplacianModel& model, std::span<const TrainingSample> train_set,
                  std::span<const TrainingSample> heldout, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (!(model.config() == config.model)) throw std::invalid_argument("train: model config differs from train config");

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "train_log.csv");
    if (!log) throw std::runtime_error("cannot write " + (options.out_dir / "train_log.csv").string());
    log << "epoch,learning_rate,laplacian,mass,total,heldout_mse\n";
  }

  auto& params = model.params();
  ad::AdamW opt;
  opt.weight_decay = config.weight_decay;
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    opt.lr = learning_rate_at(config.learning_rate, epoch, config.epochs);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, 0xE90C + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    EpochLog entry;
    entry.epoch = epoch;
    entry.learning_rate = opt.lr;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t members = std::min(config.batch_size, order.size() - b);
      const double inv = 1.0 / static_cast<double>(members);
      params.zero_grad();
      double batch_total = 0.0;
      // Members run in chunks of the thread count; gradients are summed in
      // member order so the result does not depend on the chunking.
      const std::size_t chunk = std::max<std::size_t>(1, std::min(num_threads(), members));
      for (std::size_t c0 = 0; c0 < members; c0 += chunk) {
        const std::size_t count = std::min(chunk, members - c0);
        std::vector<std::unique_ptr<ad::Tape>> tapes(count);
        std::vector<LossBreakdown> parts(count);
        std::vector<std::string> errors(count);
        parallel_for(count, [&](std::size_t q) {
          const TrainingSample& s = train_set[order[b + c0 + q]];
          try {
            tapes[q] = std::make_unique<ad::Tape>();
            const ModelOutput out = model.forward(*tapes[q], s.input);
            const LossVars lv = loss_terms(out, s.input, s.gt, training_probes(s, config.spectral_probes, epoch),
                                           config.mass_weight);
            parts[q] = {lv.laplacian.value()(0, 0), lv.mass.value()(0, 0), lv.total.value()(0, 0), {}};
            tapes[q]->backward(ad::scale(lv.total, inv));
          } catch (const std::exception& e) {
            errors[q] = e.what();
          }
        });
        for (std::size_t q = 0; q < count; ++q) {
          const std::string& name = train_set[order[b + c0 + q]].name;
          if (!errors[q].empty()) {
            write_divergence_dump(options.out_dir, model, epoch, step, name, errors[q]);
            throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + " on " + name + ": " +
                                   errors[q]);
          }
          tapes[q]->accumulate_parameter_grads();
          entry.laplacian += parts[q].laplacian;
          entry.mass += parts[q].mass;
          entry.total += parts[q].total;
          batch_total += parts[q].total;
        }
      }
      opt.step(params);
      result.step_losses.push_back(batch_total * inv);
      ++step;
    }
    const double n = static_cast<double>(train_set.size());
    entry.laplacian /= n;
    entry.mass /= n;
    entry.total /= n;
    const bool last = epoch + 1 == config.epochs;
    if (!heldout.empty() && ((epoch + 1) % config.eval_every == 0 || last))
      entry.heldout_mse = heldout_mse(model, heldout);
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (log) {
      log << epoch << ',' << fmt(entry.learning_rate) << ',' << fmt(entry.laplacian) << ',' << fmt(entry.mass) << ','
          << fmt(entry.total) << ',' << (entry.heldout_mse >= 0 ? fmt(entry.heldout_mse) : "") << '\n';
      log.flush();
    }
    if (!options.out_dir.empty() && ((epoch + 1) % config.checkpoint_every == 0 || last)) {
      ordered_json extra;
      extra["epoch"] = epoch + 1;
      extra["train_config"] = ordered_json::parse(config.to_json());
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04zu", epoch + 1);
      model.save(options.out_dir / "checkpoints" / name, extra.dump());
      if (last) model.save(options.out_dir / "checkpoint", extra.dump());
    }
    result.epochs.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);
  }
  return result;
}

// ---- evaluation ----

Evaluation evaluate(const LaplacianPair& pred, const LaplacianPair& gt, const ProbeSet& probes) {
  check_same_size(pred, gt, probes, "evaluate");
  const auto r = laplacian_residuals(pred, gt, probes);
  Evaluation e;
  e.evaluations = r.size();
  for (double v : r) {
    const double mse = v / static_cast<double>(gt.size());
    if (mse > kEvalClip) ++e.exceeded;
    e.probe_mse.push_back(std::min(mse, kEvalClip));
  }
  e.mse = e.probe_mse.empty() ? 0.0
                              : std::accumulate(e.probe_mse.begin(), e.probe_mse.end(), 0.0) /
                                    static_cast<double>(e.probe_mse.size());
  e.r_gt1 = e.evaluations ? static_cast<double>(e.exceeded) / static_cast<double>(e.evaluations) : 0.0;
  e.sparsity = pred.stiffness.mean_nonzeros_per_row();
  return e;
}

Evaluation combine(std::span<const Evaluation> parts) {
  Evaluation out;
  if (parts.empty()) return out;
  for (const auto& p : parts) {
    out.mse += p.mse;
    out.sparsity += p.sparsity;
    out.evaluations += p.evaluations;
    out.exceeded += p.exceeded;
  }
  out.mse /= static_cast<double>(parts.size());
  out.sparsity /= static_cast<double>(parts.size());
  out.r_gt1 = out.evaluations ? static_cast<double>(out.exceeded) / static_cast<double>(out.evaluations) : 0.0;
  return out;
}

}  // namespace pclap
