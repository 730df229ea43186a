#pragma once

// Finite-difference check of the complete training loss with respect to
// model parameters on a small perturbed grid.

#include <algorithm>
#include <cmath>

#include "pclap/training.hpp"

namespace full_loss_check {

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline pclap::ShapeRecord bumpy_grid(std::uint64_t seed) {
  pclap::Rng rng(seed);
  pclap::ShapeRecord r;
  r.spec.name = "grid30";
  r.spec.kind = pclap::ShapeKind::Plane;
  r.spec.seed = seed;
  r.mesh = pclap::make_plane_grid(6, 5);
  for (auto& v : r.mesh.vertices) v.z = rng.uniform(-0.1, 0.1);
  r.gt = pclap::cotangent_laplacian(r.mesh);
  r.spectral = pclap::spectral_probes(r.gt, 16, seed);
  return r;
}

// One randomly chosen scalar per parameter tensor, central differences with
// step h.
inline Result run(const pclap::ModelConfig& config, std::uint64_t seed, double h = 1e-6) {
  using namespace pclap;
  const ShapeRecord record = bumpy_grid(seed);
  const TrainingSample sample = make_training_sample(record, config);
  const ProbeSet probes = training_probes(sample, 16, 0);
  LaplacianModel model(config, seed);

  auto loss = [&] {
    ad::Tape t(false);
    return loss_terms(model.forward(t, sample.input), sample.input, sample.gt, probes).total.value()(0, 0);
  };
  {
    ad::Tape t;
    const auto lv = loss_terms(model.forward(t, sample.input), sample.input, sample.gt, probes);
    t.backward(lv.total);
    model.params().zero_grad();
    t.accumulate_parameter_grads();
  }

  Rng rng(mix_seed(seed, 0xFD));
  std::vector<double> analytic, numeric;
  for (auto& p : model.params().all()) {
    const std::size_t q = rng.index(p->value.size());
    const double keep = p->value.data[q];
    p->value.data[q] = keep + h;
    const double up = loss();
    p->value.data[q] = keep - h;
    const double down = loss();
    p->value.data[q] = keep;
    analytic.push_back(p->grad.data[q]);
    numeric.push_back((up - down) / (2 * h));
  }
  double scale = 0.0;
  for (double n : numeric) scale = std::max(scale, std::abs(n));
  Result r;
  r.checked = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-3 * scale, 1e-12});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return r;
}

}  // namespace full_loss_check
