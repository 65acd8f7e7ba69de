#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fld/tape.hpp"
#include "fld/tensor.hpp"

namespace fld {

// One irregularly sampled multivariate series. `values` is a row-major
// n_obs x channels grid where NaN marks "not observed at this time".
// `query_times`/`targets` hold the forecasting part once a task split has
// been applied; raw series leave them empty.
struct IMTSInstance {
  std::string id;
  int channels = 0;
  std::vector<double> times;        // strictly increasing
  std::vector<double> values;       // n_obs x channels, NaN = missing
  std::vector<double> query_times;  // strictly increasing, after times.back()
  std::vector<double> targets;      // n_query x channels, NaN = missing

  int n_obs() const { return static_cast<int>(times.size()); }
  int n_query() const { return static_cast<int>(query_times.size()); }
  bool has_query() const { return !query_times.empty(); }

  double value_at(int k, int c) const {
    return values[static_cast<std::size_t>(k) * channels + c];
  }
  double target_at(int k, int c) const {
    return targets[static_cast<std::size_t>(k) * channels + c];
  }
};

// Throws ValidationError with the instance id in the message.
void validate_instance(const IMTSInstance& inst);

// Per-channel observation lists with the NaNs dropped; channel c keeps the
// (time, value) pairs where the value was observed. Channels may be empty.
struct ChannelView {
  std::vector<std::vector<double>> times;
  std::vector<std::vector<double>> values;

  int channels() const { return static_cast<int>(times.size()); }
  std::size_t total_observed() const;
};

ChannelView channelize(const IMTSInstance& inst);

// Copy of `inst` with all times mapped affinely so the union of observation
// and query times spans [0, 1]. Applying it twice is a no-op.
IMTSInstance rescale_time_unit(const IMTSInstance& inst);

struct Normalization {
  std::vector<double> mean;
  std::vector<double> stdev;  // entries < 1e-8 are replaced by 1
};

struct Dataset {
  int channels = 0;
  std::vector<std::string> channel_names;
  std::vector<IMTSInstance> instances;
  std::optional<Normalization> normalization;  // set once z-scored

  const IMTSInstance& by_id(const std::string& id) const;
};

// ---- loss ------------------------------------------------------------

// Squared error summed over the observed entries of `targets`, as a tape
// scalar, plus how many entries were observed. NaN targets contribute
// exactly zero to both the value and the gradient. Batched losses divide
// the summed contributions by the summed counts, which reproduces the
// single-pool average over every observed value in the batch.
struct MaskedSq {
  Tensor sq_sum;  // 1x1
  long count = 0;
};

MaskedSq masked_sq_sum(Tape& tape, const std::vector<double>& targets, int rows,
                       int cols, const Tensor& predictions);

// sq_sum / count; requires at least one observed target.
Tensor masked_loss(Tape& tape, const std::vector<double>& targets, int rows,
                   int cols, const Tensor& predictions);

// Same quantity without a tape, for evaluation.
struct MaskedSqValue {
  double sq_sum = 0.0;
  long count = 0;
};
MaskedSqValue masked_sq_value(const std::vector<double>& targets,
                              const std::vector<double>& predictions, int rows,
                              int cols);

// ---- forecasting tasks -----------------------------------------------

enum class TaskKind { Obs75Next3, Obs75Fc25, Obs50Fc50 };

struct TaskSpec {
  TaskKind kind = TaskKind::Obs75Next3;

  // Fraction of the time span (not of the sample count) that is observed.
  double cutoff_fraction() const;
  // True when the query is capped at the next 3 points past the cutoff.
  bool next_three() const;
  std::string name() const;
  static TaskSpec parse(const std::string& text);  // ValidationError
};

// Splits a raw series at t_min + fraction * (t_max - t_min); observations at
// the cutoff stay on the input side. Throws UnsplittableError when either
// side ends up without a single observed value.
IMTSInstance apply_task_split(const IMTSInstance& series, const TaskSpec& task);

struct SplitReport {
  Dataset dataset;
  int skipped = 0;        // unsplittable series, dropped
  int short_horizon = 0;  // next-3 tasks that found fewer than 3 points
};

SplitReport split_dataset(const Dataset& raw, const TaskSpec& task);

// ---- cross-validation ------------------------------------------------

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
};

// Shuffles ids once with `seed`, then hands fold k the k-th contiguous block
// of floor(M * test_frac) ids as its test set; the validation set is the
// first floor(valid_frac * remainder) of the remaining ids. Test sets are
// pairwise disjoint across folds.
std::vector<FoldSplit> make_folds(const std::vector<std::string>& ids,
                                  int n_folds, double valid_frac,
                                  double test_frac, std::uint64_t seed);

std::vector<const IMTSInstance*> select_instances(
    const Dataset& ds, const std::vector<std::string>& ids);

// ---- transforms --------------------------------------------------------

// Keeps each observed value independently with probability keep_frac; rows
// with no observation left are dropped, and so are instances that lose all
// of their observations. Query parts are never sparsified.
Dataset sparsify(const Dataset& ds, double keep_frac, std::uint64_t seed);

// Per-channel mean/std over every observed value and target of `fit_set`.
Normalization normalize_fit(const std::vector<const IMTSInstance*>& fit_set,
                            int channels);
Dataset normalize_apply(const Dataset& ds, const Normalization& norm);
IMTSInstance normalize_instance(const IMTSInstance& inst, const Normalization& norm);

// ---- persistence -------------------------------------------------------

// JSONL, one instance per line, NaN encoded as null. A sidecar
// <stem>.meta.json next to the data carries channel names and, when the
// dataset was normalized, the statistics. Loading without a sidecar infers
// the channel count from the first line.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& data_path);

}  // namespace fld
