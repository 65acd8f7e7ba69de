#include "fld/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "fld/errors.hpp"
#include "fld/rng.hpp"
#include "json.hpp"

namespace fld {

namespace {

using nlohmann::json;

bool strictly_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] > v[i - 1])) return false;
  }
  return true;
}

long observed_count(const std::vector<double>& grid) {
  long n = 0;
  for (double v : grid) {
    if (!std::isnan(v)) ++n;
  }
  return n;
}

void require_finite_times(const std::vector<double>& ts, const std::string& id,
                          const char* what) {
  for (double t : ts) {
    if (!std::isfinite(t)) {
      throw ValidationError("instance '" + id + "': non-finite " + what);
    }
  }
}

void require_finite_or_nan(const std::vector<double>& grid,
                           const std::string& id, const char* what) {
  for (double v : grid) {
    if (!std::isnan(v) && !std::isfinite(v)) {
      throw ValidationError("instance '" + id + "': infinite " + what);
    }
  }
}

}  // namespace

void validate_instance(const IMTSInstance& inst) {
  if (inst.id.empty()) throw ValidationError("instance with empty id");
  if (inst.channels < 1) {
    throw ValidationError("instance '" + inst.id + "': channels must be >= 1");
  }
  if (inst.times.empty()) {
    throw ValidationError("instance '" + inst.id + "': no observation times");
  }
  require_finite_times(inst.times, inst.id, "observation time");
  if (!strictly_increasing(inst.times)) {
    throw ValidationError("instance '" + inst.id +
                          "': times not strictly increasing");
  }
  if (inst.values.size() != inst.times.size() * static_cast<std::size_t>(inst.channels)) {
    throw ValidationError("instance '" + inst.id + "': values grid is " +
                          std::to_string(inst.values.size()) + " entries, expected " +
                          std::to_string(inst.times.size()) + " x " +
                          std::to_string(inst.channels));
  }
  require_finite_or_nan(inst.values, inst.id, "value");
  if (observed_count(inst.values) == 0) {
    throw ValidationError("instance '" + inst.id + "': no observed values");
  }

  if (inst.query_times.empty() != inst.targets.empty()) {
    throw ValidationError("instance '" + inst.id +
                          "': query_times and targets must come together");
  }
  if (!inst.has_query()) return;

  require_finite_times(inst.query_times, inst.id, "query time");
  if (!strictly_increasing(inst.query_times)) {
    throw ValidationError("instance '" + inst.id +
                          "': query times not strictly increasing");
  }
  if (inst.query_times.front() <= inst.times.back()) {
    throw ValidationError("instance '" + inst.id +
                          "': query times must lie after the last observation");
  }
  if (inst.targets.size() !=
      inst.query_times.size() * static_cast<std::size_t>(inst.channels)) {
    throw ValidationError("instance '" + inst.id + "': targets grid is " +
                          std::to_string(inst.targets.size()) + " entries, expected " +
                          std::to_string(inst.query_times.size()) + " x " +
                          std::to_string(inst.channels));
  }
  require_finite_or_nan(inst.targets, inst.id, "target");
  if (observed_count(inst.targets) == 0) {
    throw ValidationError("instance '" + inst.id + "': no observed targets");
  }
}

std::size_t ChannelView::total_observed() const {
  std::size_t n = 0;
  for (const auto& v : values) n += v.size();
  return n;
}

ChannelView channelize(const IMTSInstance& inst) {
  ChannelView view;
  view.times.resize(inst.channels);
  view.values.resize(inst.channels);
  for (int k = 0; k < inst.n_obs(); ++k) {
    for (int c = 0; c < inst.channels; ++c) {
      const double v = inst.value_at(k, c);
      if (std::isnan(v)) continue;
      view.times[c].push_back(inst.times[k]);
      view.values[c].push_back(v);
    }
  }
  return view;
}

IMTSInstance rescale_time_unit(const IMTSInstance& inst) {
  const double lo = inst.times.front();
  const double hi = inst.has_query() ? inst.query_times.back() : inst.times.back();
  const double span = hi - lo;
  IMTSInstance out = inst;
  if (span <= 0.0) {  // single observation, no query
    for (double& t : out.times) t = 0.0;
    return out;
  }
  for (double& t : out.times) t = (t - lo) / span;
  for (double& t : out.query_times) t = (t - lo) / span;
  return out;
}

const IMTSInstance& Dataset::by_id(const std::string& id) const {
  for (const IMTSInstance& inst : instances) {
    if (inst.id == id) return inst;
  }
  throw ValidationError("no instance with id '" + id + "'");
}

// ---- loss ------------------------------------------------------------

MaskedSq masked_sq_sum(Tape& tape, const std::vector<double>& targets, int rows,
                       int cols, const Tensor& predictions) {
  if (predictions.rows != rows || predictions.cols != cols) {
    throw ShapeError("masked_sq_sum: predictions are " + shape_str(predictions) +
                     ", targets are " + shape_str(rows, cols));
  }
  if (targets.size() != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("masked_sq_sum: target grid has " +
                     std::to_string(targets.size()) + " entries, expected " +
                     shape_str(rows, cols));
  }
  Tensor filled(rows, cols);  // targets with NaN -> 0
  Tensor mask(rows, cols);    // 1 where observed
  long count = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (std::isnan(targets[i])) continue;
    filled.data[i] = targets[i];
    mask.data[i] = 1.0;
    ++count;
  }
  // Masking the difference (not the square) keeps the gradient at missing
  // entries exactly zero.
  Tensor diff = tape.mul(tape.sub(predictions, filled), mask);
  MaskedSq out{tape.sum(tape.mul(diff, diff)), count};
  return out;
}

Tensor masked_loss(Tape& tape, const std::vector<double>& targets, int rows,
                   int cols, const Tensor& predictions) {
  MaskedSq acc = masked_sq_sum(tape, targets, rows, cols, predictions);
  if (acc.count == 0) {
    throw ContractError("masked_loss: no observed targets");
  }
  return tape.scale(acc.sq_sum, 1.0 / static_cast<double>(acc.count));
}

MaskedSqValue masked_sq_value(const std::vector<double>& targets,
                              const std::vector<double>& predictions, int rows,
                              int cols) {
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (targets.size() != n || predictions.size() != n) {
    throw ShapeError("masked_sq_value: grids must both be " + shape_str(rows, cols));
  }
  MaskedSqValue out;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(targets[i])) continue;
    if (!std::isfinite(predictions[i])) {
      throw NumericError("masked_sq_value: non-finite prediction");
    }
    const double d = targets[i] - predictions[i];
    out.sq_sum += d * d;
    ++out.count;
  }
  return out;
}

// ---- forecasting tasks -----------------------------------------------

double TaskSpec::cutoff_fraction() const {
  return kind == TaskKind::Obs50Fc50 ? 0.5 : 0.75;
}

bool TaskSpec::next_three() const { return kind == TaskKind::Obs75Next3; }

std::string TaskSpec::name() const {
  switch (kind) {
    case TaskKind::Obs75Next3: return "obs75-next3";
    case TaskKind::Obs75Fc25: return "obs75-fc25";
    case TaskKind::Obs50Fc50: return "obs50-fc50";
  }
  return "";
}

TaskSpec TaskSpec::parse(const std::string& text) {
  for (TaskKind k : {TaskKind::Obs75Next3, TaskKind::Obs75Fc25, TaskKind::Obs50Fc50}) {
    TaskSpec spec{k};
    if (spec.name() == text) return spec;
  }
  throw ValidationError("unknown task '" + text +
                        "' (expected obs75-next3, obs75-fc25 or obs50-fc50)");
}

IMTSInstance apply_task_split(const IMTSInstance& series, const TaskSpec& task) {
  if (series.has_query()) {
    throw ContractError("apply_task_split: series '" + series.id +
                        "' already has a query part");
  }
  const double t0 = series.times.front();
  const double cutoff = t0 + task.cutoff_fraction() * (series.times.back() - t0);

  int n_in = 0;
  while (n_in < series.n_obs() && series.times[n_in] <= cutoff) ++n_in;
  int n_out = series.n_obs() - n_in;
  if (task.next_three()) n_out = std::min(n_out, 3);
  if (n_out == 0) {
    throw UnsplittableError("instance '" + series.id +
                            "': no observations after the cutoff");
  }

  IMTSInstance out;
  out.id = series.id;
  out.channels = series.channels;
  out.times.assign(series.times.begin(), series.times.begin() + n_in);
  out.values.assign(series.values.begin(),
                    series.values.begin() + static_cast<std::size_t>(n_in) * series.channels);
  out.query_times.assign(series.times.begin() + n_in,
                         series.times.begin() + n_in + n_out);
  out.targets.assign(series.values.begin() + static_cast<std::size_t>(n_in) * series.channels,
                     series.values.begin() + static_cast<std::size_t>(n_in + n_out) * series.channels);

  if (observed_count(out.values) == 0) {
    throw UnsplittableError("instance '" + series.id +
                            "': no observed values before the cutoff");
  }
  if (observed_count(out.targets) == 0) {
    throw UnsplittableError("instance '" + series.id +
                            "': no observed targets after the cutoff");
  }
  return out;
}

SplitReport split_dataset(const Dataset& raw, const TaskSpec& task) {
  SplitReport report;
  report.dataset.channels = raw.channels;
  report.dataset.channel_names = raw.channel_names;
  for (const IMTSInstance& series : raw.instances) {
    try {
      IMTSInstance split = apply_task_split(series, task);
      if (task.next_three() && split.n_query() < 3) ++report.short_horizon;
      report.dataset.instances.push_back(std::move(split));
    } catch (const UnsplittableError&) {
      ++report.skipped;
    }
  }
  return report;
}

// ---- cross-validation ------------------------------------------------

std::vector<FoldSplit> make_folds(const std::vector<std::string>& ids,
                                  int n_folds, double valid_frac,
                                  double test_frac, std::uint64_t seed) {
  if (n_folds < 1) throw ValidationError("make_folds: n_folds must be >= 1");
  if (!(test_frac > 0.0) || !(test_frac < 1.0)) {
    throw ValidationError("make_folds: test_frac must be in (0, 1)");
  }
  if (valid_frac < 0.0 || valid_frac >= 1.0) {
    throw ValidationError("make_folds: valid_frac must be in [0, 1)");
  }
  if (n_folds * test_frac > 1.0 + 1e-12) {
    throw ValidationError("make_folds: " + std::to_string(n_folds) +
                          " disjoint test sets of fraction " +
                          std::to_string(test_frac) + " do not fit");
  }
  {
    std::unordered_set<std::string> uniq(ids.begin(), ids.end());
    if (uniq.size() != ids.size()) {
      throw ValidationError("make_folds: duplicate instance ids");
    }
  }

  const auto m = static_cast<long>(ids.size());
  const long n_test = static_cast<long>(std::floor(m * test_frac));
  if (n_test < 1) {
    throw ValidationError("make_folds: " + std::to_string(m) +
                          " instances are too few for test_frac " +
                          std::to_string(test_frac));
  }

  std::vector<std::string> shuffled = ids;
  Rng rng(seed);
  rng.shuffle(shuffled);

  std::vector<FoldSplit> folds;
  for (int k = 0; k < n_folds; ++k) {
    const long lo = k * n_test;
    const long hi = lo + n_test;
    FoldSplit fold;
    fold.test.assign(shuffled.begin() + lo, shuffled.begin() + hi);
    std::vector<std::string> rest;
    rest.reserve(m - n_test);
    rest.insert(rest.end(), shuffled.begin(), shuffled.begin() + lo);
    rest.insert(rest.end(), shuffled.begin() + hi, shuffled.end());
    const long n_valid = static_cast<long>(std::floor(rest.size() * valid_frac));
    if (valid_frac > 0.0 && n_valid < 1) {
      throw ValidationError("make_folds: too few instances for valid_frac " +
                            std::to_string(valid_frac));
    }
    fold.valid.assign(rest.begin(), rest.begin() + n_valid);
    fold.train.assign(rest.begin() + n_valid, rest.end());
    if (fold.train.empty()) {
      throw ValidationError("make_folds: fold " + std::to_string(k) +
                            " has an empty training set");
    }
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::vector<const IMTSInstance*> select_instances(
    const Dataset& ds, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const IMTSInstance*> index;
  index.reserve(ds.instances.size());
  for (const IMTSInstance& inst : ds.instances) index.emplace(inst.id, &inst);
  std::vector<const IMTSInstance*> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) {
      throw ValidationError("dataset has no instance with id '" + id + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

// ---- transforms --------------------------------------------------------

Dataset sparsify(const Dataset& ds, double keep_frac, std::uint64_t seed) {
  if (!(keep_frac > 0.0) || keep_frac > 1.0) {
    throw ValidationError("sparsify: keep_frac must be in (0, 1]");
  }
  Rng rng(seed);
  Dataset out;
  out.channels = ds.channels;
  out.channel_names = ds.channel_names;
  out.normalization = ds.normalization;
  for (const IMTSInstance& inst : ds.instances) {
    IMTSInstance kept;
    kept.id = inst.id;
    kept.channels = inst.channels;
    kept.query_times = inst.query_times;
    kept.targets = inst.targets;
    for (int k = 0; k < inst.n_obs(); ++k) {
      std::vector<double> row(inst.channels, std::nan(""));
      bool any = false;
      for (int c = 0; c < inst.channels; ++c) {
        const double v = inst.value_at(k, c);
        if (std::isnan(v)) continue;
        if (rng.uniform() < keep_frac) {
          row[c] = v;
          any = true;
        }
      }
      if (!any) continue;
      kept.times.push_back(inst.times[k]);
      kept.values.insert(kept.values.end(), row.begin(), row.end());
    }
    if (kept.times.empty()) continue;  // everything dropped
    out.instances.push_back(std::move(kept));
  }
  return out;
}

Normalization normalize_fit(const std::vector<const IMTSInstance*>& fit_set,
                            int channels) {
  if (fit_set.empty()) throw ValidationError("normalize_fit: empty fit set");
  std::vector<double> sum(channels, 0.0);
  std::vector<long> n(channels, 0);
  auto scan = [&](const std::vector<double>& grid, auto&& fn) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!std::isnan(grid[i])) fn(static_cast<int>(i % channels), grid[i]);
    }
  };
  for (const IMTSInstance* inst : fit_set) {
    scan(inst->values, [&](int c, double v) { sum[c] += v; ++n[c]; });
    scan(inst->targets, [&](int c, double v) { sum[c] += v; ++n[c]; });
  }
  Normalization norm;
  norm.mean.resize(channels, 0.0);
  norm.stdev.resize(channels, 1.0);
  for (int c = 0; c < channels; ++c) {
    if (n[c] > 0) norm.mean[c] = sum[c] / static_cast<double>(n[c]);
  }
  std::vector<double> sq(channels, 0.0);
  for (const IMTSInstance* inst : fit_set) {
    auto acc = [&](int c, double v) {
      const double d = v - norm.mean[c];
      sq[c] += d * d;
    };
    scan(inst->values, acc);
    scan(inst->targets, acc);
  }
  for (int c = 0; c < channels; ++c) {
    if (n[c] > 0) {
      const double s = std::sqrt(sq[c] / static_cast<double>(n[c]));
      norm.stdev[c] = s < 1e-8 ? 1.0 : s;
    }
  }
  return norm;
}

IMTSInstance normalize_instance(const IMTSInstance& inst, const Normalization& norm) {
  if (static_cast<int>(norm.mean.size()) != inst.channels) {
    throw ShapeError("normalize: statistics cover " +
                     std::to_string(norm.mean.size()) + " channels, instance has " +
                     std::to_string(inst.channels));
  }
  IMTSInstance out = inst;
  auto apply = [&](std::vector<double>& grid) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (std::isnan(grid[i])) continue;
      const int c = static_cast<int>(i % inst.channels);
      grid[i] = (grid[i] - norm.mean[c]) / norm.stdev[c];
    }
  };
  apply(out.values);
  apply(out.targets);
  return out;
}

Dataset normalize_apply(const Dataset& ds, const Normalization& norm) {
  Dataset out;
  out.channels = ds.channels;
  out.channel_names = ds.channel_names;
  out.normalization = norm;
  out.instances.reserve(ds.instances.size());
  for (const IMTSInstance& inst : ds.instances) {
    out.instances.push_back(normalize_instance(inst, norm));
  }
  return out;
}

// ---- persistence -------------------------------------------------------

namespace {

std::vector<double> parse_grid(const json& arr, int channels,
                               const std::string& id, const char* what) {
  std::vector<double> grid;
  grid.reserve(arr.size() * channels);
  for (const json& row : arr) {
    if (!row.is_array() || static_cast<int>(row.size()) != channels) {
      throw ParseError("instance '" + id + "': each " + std::string(what) +
                       " row needs " + std::to_string(channels) + " entries");
    }
    for (const json& cell : row) {
      if (cell.is_null()) {
        grid.push_back(std::nan(""));
      } else if (cell.is_number()) {
        grid.push_back(cell.get<double>());
      } else {
        throw ParseError("instance '" + id + "': " + what +
                         " entries must be numbers or null");
      }
    }
  }
  return grid;
}

json grid_to_json(const std::vector<double>& grid, int rows, int cols) {
  json out = json::array();
  for (int k = 0; k < rows; ++k) {
    json row = json::array();
    for (int c = 0; c < cols; ++c) {
      const double v = grid[static_cast<std::size_t>(k) * cols + c];
      if (std::isnan(v)) {
        row.push_back(nullptr);
      } else {
        row.push_back(v);
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& data_path) {
  std::filesystem::path p = data_path;
  p.replace_extension(".meta.json");
  return p;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file " + path.string());

  Dataset ds;
  bool meta_loaded = false;
  const std::filesystem::path meta = sidecar_path(path);
  if (std::filesystem::exists(meta)) {
    std::ifstream min(meta);
    json j;
    try {
      j = json::parse(min);
    } catch (const json::exception& e) {
      throw ParseError("sidecar " + meta.string() + ": " + e.what());
    }
    ds.channels = j.at("channels").get<int>();
    ds.channel_names = j.at("channel_names").get<std::vector<std::string>>();
    if (j.contains("normalization") && !j.at("normalization").is_null()) {
      Normalization norm;
      norm.mean = j.at("normalization").at("mean").get<std::vector<double>>();
      norm.stdev = j.at("normalization").at("std").get<std::vector<double>>();
      ds.normalization = std::move(norm);
    }
    meta_loaded = true;
  }

  std::string line;
  long line_no = 0;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    IMTSInstance inst;
    try {
      inst.id = j.at("id").get<std::string>();
      inst.times = j.at("times").get<std::vector<double>>();
      const json& values = j.at("values");
      if (!meta_loaded && ds.channels == 0) {
        if (values.empty() || !values[0].is_array()) {
          throw ParseError("first values row must be a non-empty array");
        }
        ds.channels = static_cast<int>(values[0].size());
      }
      inst.channels = ds.channels;
      inst.values = parse_grid(values, ds.channels, inst.id, "values");
      if (j.contains("query_times") != j.contains("targets")) {
        throw ParseError("instance '" + inst.id +
                         "': query_times and targets must come together");
      }
      if (j.contains("query_times")) {
        inst.query_times = j.at("query_times").get<std::vector<double>>();
        inst.targets = parse_grid(j.at("targets"), ds.channels, inst.id, "targets");
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (inst.values.size() != inst.times.size() * static_cast<std::size_t>(ds.channels)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": values rows do not match times");
    }
    try {
      validate_instance(inst);
    } catch (const ValidationError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(inst.id).second) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": duplicate id '" + inst.id + "'");
    }
    ds.instances.push_back(std::move(inst));
  }
  if (ds.instances.empty()) {
    throw ParseError(path.string() + ": dataset is empty");
  }
  if (ds.channel_names.empty()) {
    for (int c = 0; c < ds.channels; ++c) {
      ds.channel_names.push_back("ch" + std::to_string(c));
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write dataset file " + path.string());
  for (const IMTSInstance& inst : ds.instances) {
    json j;
    j["id"] = inst.id;
    j["times"] = inst.times;
    j["values"] = grid_to_json(inst.values, inst.n_obs(), inst.channels);
    if (inst.has_query()) {
      j["query_times"] = inst.query_times;
      j["targets"] = grid_to_json(inst.targets, inst.n_query(), inst.channels);
    }
    out << j.dump() << "\n";
  }

  json meta;
  meta["channels"] = ds.channels;
  meta["channel_names"] = ds.channel_names;
  if (ds.normalization) {
    meta["normalization"] = {{"mean", ds.normalization->mean},
                             {"std", ds.normalization->stdev}};
  } else {
    meta["normalization"] = nullptr;
  }
  std::ofstream mout(sidecar_path(path));
  if (!mout) throw ParseError("cannot write sidecar for " + path.string());
  mout << meta.dump(2) << "\n";
}

}  // namespace fld
