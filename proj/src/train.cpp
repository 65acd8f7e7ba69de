#include "fld/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "fld/errors.hpp"
#include "fld/rng.hpp"

namespace fld {

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("train config: lr must be > 0");
  if (l2 < 0.0) throw ValidationError("train config: l2 must be >= 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw ValidationError("train config: max_epochs must be >= 1");
  if (patience < 1) throw ValidationError("train config: patience must be >= 1");
}

AdamState init_adam(const ModelParams& params) {
  AdamState st;
  params.visit([&](const std::string&, const Tensor& t) {
    st.m.emplace_back(t.rows, t.cols);
    st.v.emplace_back(t.rows, t.cols);
  });
  return st;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads,
               AdamState& state, const TrainConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
  std::size_t i = 0;
  params.visit([&](const std::string& name, Tensor& w) {
    if (i >= grads.size()) {
      throw ContractError("adam_step: fewer gradients than parameter tensors");
    }
    const Tensor& g0 = grads[i];
    if (!g0.same_shape(w)) {
      throw ShapeError("adam_step: gradient for " + name + " is " +
                       shape_str(g0) + ", parameter is " + shape_str(w));
    }
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < w.data.size(); ++j) {
      const double g = g0.data[j] + cfg.l2 * w.data[j];
      if (!std::isfinite(g)) {
        throw NumericError("adam_step: non-finite gradient in " + name);
      }
      m.data[j] = kBeta1 * m.data[j] + (1.0 - kBeta1) * g;
      v.data[j] = kBeta2 * v.data[j] + (1.0 - kBeta2) * g * g;
      w.data[j] -= cfg.lr * (m.data[j] / bc1) / (std::sqrt(v.data[j] / bc2) + kEps);
    }
    ++i;
  });
  if (i != grads.size()) {
    throw ContractError("adam_step: more gradients than parameter tensors");
  }
}

namespace {

// Gradients in visit order; parameters the loss never touched get zeros.
std::vector<Tensor> collect_grads(const ModelParams& bound, GradMap& grads) {
  std::vector<Tensor> out;
  bound.visit([&](const std::string&, const Tensor& t) {
    auto it = grads.find(t.node);
    out.push_back(it == grads.end() ? Tensor(t.rows, t.cols)
                                    : std::move(it->second));
  });
  return out;
}

}  // namespace

TrainResult train(const FLDConfig& config, const ModelParams& init,
                  const std::vector<const IMTSInstance*>& train_set,
                  const std::vector<const IMTSInstance*>& valid_set,
                  const TrainConfig& cfg) {
  config.validate();
  cfg.validate();
  if (train_set.empty()) throw ValidationError("train: empty training set");
  if (valid_set.empty()) throw ValidationError("train: empty validation set");

  ModelParams params = init;
  AdamState adam = init_adam(params);
  Rng rng(cfg.seed);

  TrainResult res;
  res.best_params = params;
  res.best_valid = std::numeric_limits<double>::infinity();
  int since_improve = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    rng.shuffle(order);

    double epoch_sq = 0.0;
    long epoch_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Tape tape;
      ModelParams bound = bind(tape, params);
      Tensor batch_sq;
      long batch_count = 0;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const IMTSInstance* inst = train_set[order[bi]];
        Tensor yhat = forward(tape, *inst, bound, config);
        MaskedSq ms = masked_sq_sum(tape, inst->targets, inst->n_query(),
                                    inst->channels, yhat);
        batch_sq = bi == start ? ms.sq_sum : tape.add(batch_sq, ms.sq_sum);
        batch_count += ms.count;
      }
      if (batch_count == 0) {
        throw ContractError("train: batch contains no observed targets");
      }
      Tensor loss = tape.scale(batch_sq, 1.0 / static_cast<double>(batch_count));
      epoch_sq += loss.value() * static_cast<double>(batch_count);
      epoch_count += batch_count;
      GradMap grads = tape.backward(loss);
      std::vector<Tensor> gvec = collect_grads(bound, grads);
      adam_step(params, gvec, adam, cfg);
    }

    const EvalResult valid = evaluate(params, config, valid_set);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    res.history.push_back({epoch, epoch_sq / static_cast<double>(epoch_count),
                           valid.mse, seconds});

    if (valid.mse < res.best_valid) {
      res.best_valid = valid.mse;
      res.best_params = params;
      res.best_epoch = epoch;
      since_improve = 0;
    } else if (++since_improve >= cfg.patience) {
      break;
    }
  }
  return res;
}

EvalResult evaluate(const ModelParams& params, const FLDConfig& config,
                    const std::vector<const IMTSInstance*>& split) {
  if (split.empty()) throw ValidationError("evaluate: empty split");
  EvalResult res;
  double sq = 0.0;
  for (const IMTSInstance* inst : split) {
    if (inst->channels != config.channels) {
      throw ContractError("evaluate: instance '" + inst->id + "' has " +
                          std::to_string(inst->channels) +
                          " channels, model expects " +
                          std::to_string(config.channels));
    }
    const std::vector<double> preds = predict_values(*inst, params, config);
    const MaskedSqValue v =
        masked_sq_value(inst->targets, preds, inst->n_query(), inst->channels);
    res.per_instance.push_back(
        {inst->id, v.count > 0 ? v.sq_sum / static_cast<double>(v.count) : 0.0,
         v.count});
    sq += v.sq_sum;
    res.count += v.count;
  }
  if (res.count == 0) {
    throw ContractError("evaluate: split has no observed targets");
  }
  res.mse = sq / static_cast<double>(res.count);
  return res;
}

long SearchSpace::combinations() const {
  return static_cast<long>(hidden.size()) * heads.size() * decoder_depth.size() *
         embed.size() * curves.size();
}

SearchResult random_search(const SearchSpace& space, int channels,
                           const std::vector<const IMTSInstance*>& train_set,
                           const std::vector<const IMTSInstance*>& valid_set,
                           const TrainConfig& base, std::uint64_t seed) {
  if (space.budget < 1) throw ValidationError("search: budget must be >= 1");
  const long total = space.combinations();
  if (total == 0) throw ValidationError("search: empty space");
  if (space.budget > total) {
    throw ValidationError("search: budget " + std::to_string(space.budget) +
                          " exceeds the " + std::to_string(total) +
                          " combinations in the space");
  }

  std::vector<FLDConfig> grid;
  grid.reserve(total);
  for (CurveKind curve : space.curves) {
    for (int hidden : space.hidden) {
      for (int heads : space.heads) {
        for (int depth : space.decoder_depth) {
          for (int embed : space.embed) {
            FLDConfig cfg;
            cfg.curve = curve;
            cfg.latent = hidden;
            cfg.heads = heads;
            cfg.decoder_depth = depth;
            cfg.embed = embed;
            cfg.channels = channels;
            grid.push_back(cfg);
          }
        }
      }
    }
  }
  Rng rng(seed);
  rng.shuffle(grid);

  SearchResult res;
  const SearchRow* best = nullptr;
  for (int i = 0; i < space.budget; ++i) {
    const FLDConfig& cfg = grid[static_cast<std::size_t>(i)];
    ModelParams start = init_params(cfg, mix_seed(seed, static_cast<std::uint64_t>(i)));
    TrainConfig tc = base;
    tc.seed = mix_seed(seed, 1000 + static_cast<std::uint64_t>(i));
    TrainResult tr = train(cfg, start, train_set, valid_set, tc);
    SearchRow row{i, cfg, tr.best_valid, start.parameter_count()};
    res.rows.push_back(row);
  }
  for (const SearchRow& row : res.rows) {
    if (!best || row.valid_mse < best->valid_mse ||
        (row.valid_mse == best->valid_mse && row.param_count < best->param_count)) {
      best = &row;
    }
  }
  res.best = best->config;
  res.best_sample = best->sample;
  return res;
}

}  // namespace fld
