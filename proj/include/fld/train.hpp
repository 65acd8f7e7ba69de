#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fld/data.hpp"
#include "fld/model.hpp"

namespace fld {

struct TrainConfig {
  double lr = 1e-4;
  double l2 = 1e-3;
  int batch_size = 64;
  int max_epochs = 300;
  int patience = 30;  // epochs without validation improvement before stopping
  std::uint64_t seed = 0;

  void validate() const;
};

// First and second moment estimates, one pair per parameter tensor in
// ModelParams::visit order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

AdamState init_adam(const ModelParams& params);

// One bias-corrected Adam update (beta1=0.9, beta2=0.999, eps=1e-8) with L2
// coupled into the gradient: g <- g + l2 * w. `grads` must align with
// ModelParams::visit order. Non-finite gradients abort with the parameter
// group's name.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads,
               AdamState& state, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_mse = 0.0;
  double valid_mse = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams best_params;
  int best_epoch = 0;
  double best_valid = 0.0;
  std::vector<EpochStats> history;
};

// Mini-batch training with per-epoch reshuffling and early stopping: keeps
// the parameters of the epoch with the lowest validation MSE and stops after
// `patience` epochs without strict improvement. The batch loss divides the
// summed squared residuals by the summed observed-target counts, so batching
// never changes what is being averaged.
TrainResult train(const FLDConfig& config, const ModelParams& init,
                  const std::vector<const IMTSInstance*>& train_set,
                  const std::vector<const IMTSInstance*>& valid_set,
                  const TrainConfig& cfg);

struct InstanceLoss {
  std::string id;
  double mse = 0.0;
  long count = 0;
};

struct EvalResult {
  double mse = 0.0;  // pooled over every observed target scalar
  long count = 0;
  std::vector<InstanceLoss> per_instance;
};

EvalResult evaluate(const ModelParams& params, const FLDConfig& config,
                    const std::vector<const IMTSInstance*>& split);

struct SearchSpace {
  std::vector<int> hidden = {32, 128, 256, 512};
  std::vector<int> heads = {4, 8};
  std::vector<int> decoder_depth = {2, 4};
  std::vector<int> embed = {2, 4, 8};
  std::vector<CurveKind> curves = {CurveKind::Linear, CurveKind::Quadratic,
                                   CurveKind::Sine};
  int budget = 10;

  long combinations() const;
};

struct SearchRow {
  int sample = 0;  // order in which the config was drawn
  FLDConfig config;
  double valid_mse = 0.0;
  long param_count = 0;
};

struct SearchResult {
  FLDConfig best;
  int best_sample = 0;
  std::vector<SearchRow> rows;
};

// Uniform sampling without replacement from the full grid, `budget` configs,
// each trained from its own seeded initialization; the winner minimizes
// validation MSE with ties broken by fewer parameters, then by draw order.
SearchResult random_search(const SearchSpace& space, int channels,
                           const std::vector<const IMTSInstance*>& train_set,
                           const std::vector<const IMTSInstance*>& valid_set,
                           const TrainConfig& base, std::uint64_t seed);

}  // namespace fld
