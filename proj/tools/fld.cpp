// Command-line surface: dataset generation, task splitting, training,
// hyperparameter search, evaluation, prediction export, inference timing and
// gradient checking. Every run writes one manifest.json next to its outputs;
// apart from wall-clock fields, reruns with the same flags are byte-identical.
#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "fld/data.hpp"
#include "fld/errors.hpp"
#include "fld/goodwin.hpp"
#include "fld/model.hpp"
#include "fld/rng.hpp"
#include "fld/tape.hpp"
#include "fld/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fld;

#ifndef FLD_VERSION
#define FLD_VERSION "0.0.0"
#endif

namespace {

// Shortest representation that parses back to the same double; keeps every
// CSV bit-reproducible.
std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string iso_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// --config support: a flat JSON object whose keys are long option names
// (without the leading dashes). The file expands into ordinary tokens before
// parsing; keys already typed on the command line are skipped, so explicit
// flags win. Unknown keys surface as normal unrecognized-flag errors.
std::vector<std::string> expand_config_args(std::vector<std::string> tokens) {
  auto has_flag = [&tokens](const std::string& flag) {
    for (const std::string& t : tokens) {
      if (t == flag || t.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  for (std::size_t i = 0; i < tokens.size();) {
    std::string file;
    if (tokens[i] == "--config") {
      if (i + 1 >= tokens.size()) throw ValidationError("--config requires a file path");
      file = tokens[i + 1];
      tokens.erase(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i) + 2);
    } else if (tokens[i].rfind("--config=", 0) == 0) {
      file = tokens[i].substr(std::string("--config=").size());
      tokens.erase(tokens.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      ++i;
      continue;
    }
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot read config file " + file);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError("config file " + file + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) {
      throw ValidationError("config file " + file + " must hold a JSON object");
    }
    std::vector<std::string> extra;
    for (const auto& [key, val] : j.items()) {
      const std::string flag = "--" + key;
      if (has_flag(flag)) continue;
      auto push = [&extra, &flag](const json& v) {
        if (v.is_string()) {
          extra.push_back(flag + "=" + v.get<std::string>());
        } else if (v.is_boolean()) {
          extra.push_back(flag + (v.get<bool>() ? "=true" : "=false"));
        } else {
          extra.push_back(flag + "=" + v.dump());
        }
      };
      if (val.is_array()) {
        for (const auto& e : val) push(e);
      } else {
        push(val);
      }
    }
    tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(i), extra.begin(),
                  extra.end());
    i += extra.size();
  }
  return tokens;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    json config, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, double seconds,
                    json extra = json::object()) {
  json j{{"format_version", 1},
         {"tool", "fld"},
         {"version", FLD_VERSION},
         {"command", command},
         {"config", std::move(config)},
         {"inputs", inputs},
         {"outputs", outputs},
         {"finished_utc", iso_utc_now()},
         {"wall_seconds", seconds}};
  if (!extra.empty()) j["results"] = std::move(extra);
  std::ofstream out(out_dir / "manifest.json");
  out << j.dump(2) << '\n';
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

// ---- shared pipeline pieces ---------------------------------------------

struct FoldArgs {
  int n_folds = 5;
  int fold = 0;
  double valid_frac = 0.2;
  double test_frac = 0.1;
};

void add_fold_flags(CLI::App* sub, FoldArgs& a) {
  sub->add_option("--folds", a.n_folds, "number of cross-validation folds")
      ->capture_default_str();
  sub->add_option("--fold", a.fold, "fold index to use")->capture_default_str();
  sub->add_option("--valid-frac", a.valid_frac,
                  "fraction of non-test instances held out for validation")
      ->capture_default_str();
  sub->add_option("--test-frac", a.test_frac, "test fraction per fold")
      ->capture_default_str();
}

FoldSplit pick_fold(const Dataset& ds, const FoldArgs& fa, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& inst : ds.instances) ids.push_back(inst.id);
  auto folds = make_folds(ids, fa.n_folds, fa.valid_frac, fa.test_frac, seed);
  if (fa.fold < 0 || fa.fold >= static_cast<int>(folds.size())) {
    throw ValidationError("fold index " + std::to_string(fa.fold) +
                          " outside [0, " + std::to_string(folds.size() - 1) + "]");
  }
  return folds[static_cast<std::size_t>(fa.fold)];
}

void require_queries(const Dataset& ds) {
  for (const auto& inst : ds.instances) {
    if (!inst.has_query()) {
      throw ValidationError("instance '" + inst.id +
                            "' has no forecast window; run `fld split` first");
    }
  }
}

json fold_json(const FoldArgs& fa) {
  return json{{"folds", fa.n_folds},
              {"fold", fa.fold},
              {"valid_frac", fa.valid_frac},
              {"test_frac", fa.test_frac}};
}

json config_json(const FLDConfig& c) {
  return json{{"curve", curve_name(c.curve)}, {"hidden", c.latent},
              {"heads", c.heads},             {"embed", c.embed},
              {"depth", c.decoder_depth},     {"channels", c.channels}};
}

json train_json(const TrainConfig& t) {
  return json{{"lr", t.lr},           {"l2", t.l2},
              {"batch", t.batch_size}, {"epochs", t.max_epochs},
              {"patience", t.patience}};
}

void write_history_csv(const fs::path& path, const std::vector<EpochStats>& hist) {
  std::ofstream out(path);
  out << "epoch,train_mse,valid_mse,seconds\n";
  for (const auto& h : hist) {
    out << h.epoch << ',' << fmt(h.train_mse) << ',' << fmt(h.valid_mse) << ','
        << fmt(h.seconds) << '\n';
  }
}

// ---- generate -------------------------------------------------------------

struct GenerateArgs {
  int count = 0;
  std::uint64_t seed = 0;
  int points = 50;
  double sigma = 0.0;
  double drop = 0.0;
  std::vector<int> observe = {0, 1};
  double duration = 100.0;
  double step = 1e-3;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  Timer timer;
  SamplingSpec sampling;
  sampling.points_per_instance = a.points;
  sampling.noise_sigma = a.sigma;
  sampling.drop_prob = a.drop;
  sampling.observe = a.observe;
  GoodwinParams nominal;
  nominal.duration = a.duration;
  nominal.step = a.step;

  Dataset ds = generate_goodwin(a.count, a.seed, sampling, nominal);
  const fs::path dir = ensure_out_dir(a.out);
  const fs::path data = dir / "goodwin.jsonl";
  save_dataset(ds, data);

  json cfg{{"count", a.count},   {"seed", a.seed},   {"points", a.points},
           {"sigma", a.sigma},   {"drop", a.drop},   {"observe", a.observe},
           {"duration", a.duration}, {"step", a.step}};
  long observations = 0;
  for (const auto& inst : ds.instances) observations += inst.n_obs();
  write_manifest(dir, "generate", cfg, {}, {data.string(), sidecar_path(data).string()},
                 timer.seconds(),
                 json{{"instances", ds.instances.size()}, {"observations", observations}});
  std::cout << "generate: wrote " << ds.instances.size() << " instances ("
            << observations << " observation rows) to " << data.string() << "\n";
  return 0;
}

// ---- split ----------------------------------------------------------------

struct SplitArgs {
  std::string data;
  std::string task;
  std::string out;
};

int cmd_split(const SplitArgs& a) {
  Timer timer;
  const TaskSpec task = TaskSpec::parse(a.task);
  Dataset raw = load_dataset(a.data);
  SplitReport report = split_dataset(raw, task);

  const fs::path dir = ensure_out_dir(a.out);
  const fs::path data = dir / (task.name() + ".jsonl");
  save_dataset(report.dataset, data);

  write_manifest(dir, "split", json{{"data", a.data}, {"task", task.name()}},
                 {a.data}, {data.string(), sidecar_path(data).string()},
                 timer.seconds(),
                 json{{"kept", report.dataset.instances.size()},
                      {"skipped_unsplittable", report.skipped},
                      {"short_horizon", report.short_horizon}});
  std::cout << "split: task " << task.name() << " kept "
            << report.dataset.instances.size() << " instances, skipped "
            << report.skipped << " unsplittable";
  if (task.next_three()) std::cout << ", " << report.short_horizon << " short-horizon";
  std::cout << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::string curve = "linear";
  int hidden = 32;
  int heads = 4;
  int embed = 4;
  int depth = 2;
  TrainConfig tc;
  FoldArgs folds;
  std::uint64_t seed = 0;
  bool normalize = true;
  std::string task;  // provenance only
};

void add_train_flags(CLI::App* sub, TrainArgs& a, bool model_flags) {
  sub->add_option("--data", a.data, "task-split JSONL dataset")->required();
  if (model_flags) {
    sub->add_option("--curve", a.curve, "latent curve family: linear, quadratic or sine")
        ->capture_default_str();
    sub->add_option("--hidden", a.hidden, "latent width L")->capture_default_str();
    sub->add_option("--heads", a.heads, "attention heads")->capture_default_str();
    sub->add_option("--embed", a.embed, "time-embedding dimension")
        ->capture_default_str();
    sub->add_option("--depth", a.depth, "decoder hidden layers")
        ->capture_default_str();
  }
  sub->add_option("--lr", a.tc.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--l2", a.tc.l2, "L2 weight")->capture_default_str();
  sub->add_option("--batch", a.tc.batch_size, "mini-batch size")
      ->capture_default_str();
  sub->add_option("--epochs", a.tc.max_epochs, "epoch cap")->capture_default_str();
  sub->add_option("--patience", a.tc.patience,
                  "epochs without validation improvement before stopping")
      ->capture_default_str();
  sub->add_option("--seed", a.seed, "master seed (folds, init, batching)")
      ->capture_default_str();
  sub->add_flag("--normalize,!--no-normalize", a.normalize,
                "z-score values with training-fold statistics")
      ->capture_default_str();
  sub->add_option("--task", a.task, "task label recorded in the checkpoint")
      ->capture_default_str();
}

struct PreparedFold {
  Dataset normalized;  // or plain copy when normalization is off
  std::optional<Normalization> norm;
  std::vector<const IMTSInstance*> train, valid, test;
};

PreparedFold prepare_fold(const Dataset& ds, const FoldArgs& fa,
                          std::uint64_t seed, bool normalize) {
  FoldSplit fold = pick_fold(ds, fa, seed);
  PreparedFold prep;
  if (normalize) {
    const auto fit_on = select_instances(ds, fold.train);
    prep.norm = normalize_fit(fit_on, ds.channels);
    prep.normalized = normalize_apply(ds, *prep.norm);
  } else {
    prep.normalized = ds;
  }
  prep.train = select_instances(prep.normalized, fold.train);
  prep.valid = select_instances(prep.normalized, fold.valid);
  prep.test = select_instances(prep.normalized, fold.test);
  return prep;
}

int cmd_train(const TrainArgs& a) {
  Timer timer;
  Dataset ds = load_dataset(a.data);
  require_queries(ds);

  FLDConfig config;
  config.curve = parse_curve(a.curve);
  config.latent = a.hidden;
  config.heads = a.heads;
  config.embed = a.embed;
  config.decoder_depth = a.depth;
  config.channels = ds.channels;
  config.validate();

  TrainConfig tc = a.tc;
  tc.seed = mix_seed(a.seed, 2);
  tc.validate();

  PreparedFold prep = prepare_fold(ds, a.folds, a.seed, a.normalize);
  ModelParams init = init_params(config, mix_seed(a.seed, 1));
  TrainResult res = train(config, init, prep.train, prep.valid, tc);
  EvalResult test = evaluate(res.best_params, config, prep.test);

  const fs::path dir = ensure_out_dir(a.out);
  Checkpoint cp;
  cp.config = config;
  cp.params = res.best_params;
  cp.channel_names = ds.channel_names;
  cp.normalization = prep.norm;
  cp.task = a.task;
  cp.seed = a.seed;
  cp.fold = a.folds.fold;
  const fs::path model = dir / "model.json";
  save_checkpoint(cp, model);
  const fs::path history = dir / "history.csv";
  write_history_csv(history, res.history);

  json cfg{{"data", a.data},
           {"model", config_json(config)},
           {"train", train_json(tc)},
           {"folding", fold_json(a.folds)},
           {"seed", a.seed},
           {"normalize", a.normalize}};
  write_manifest(dir, "train", cfg, {a.data}, {model.string(), history.string()},
                 timer.seconds(),
                 json{{"epochs_run", res.history.size()},
                      {"best_epoch", res.best_epoch},
                      {"best_valid_mse", res.best_valid},
                      {"test_mse", test.mse},
                      {"test_count", test.count},
                      {"param_count", res.best_params.parameter_count()}});
  std::cout << "train: fold " << a.folds.fold << ", best epoch " << res.best_epoch
            << " of " << res.history.size() << ", valid MSE " << fmt(res.best_valid)
            << ", test MSE " << fmt(test.mse) << "\n";
  return 0;
}

// ---- search -----------------------------------------------------------

struct SearchArgs {
  TrainArgs base;  // model flags unused; search draws them from the space
  int budget = 10;
};

int cmd_search(const SearchArgs& a) {
  Timer timer;
  Dataset ds = load_dataset(a.base.data);
  require_queries(ds);

  TrainConfig tc = a.base.tc;
  tc.validate();

  // The search always scores candidates on fold 0.
  FoldArgs fa = a.base.folds;
  fa.fold = 0;
  PreparedFold prep = prepare_fold(ds, fa, a.base.seed, a.base.normalize);

  SearchSpace space;
  space.budget = a.budget;
  SearchResult res = random_search(space, ds.channels, prep.train, prep.valid,
                                   tc, a.base.seed);

  const fs::path dir = ensure_out_dir(a.base.out);
  const fs::path csv = dir / "search.csv";
  {
    std::ofstream out(csv);
    out << "sample,curve,hidden,heads,decoder_depth,embed,valid_mse,params_count\n";
    for (const auto& r : res.rows) {
      out << r.sample << ',' << curve_name(r.config.curve) << ',' << r.config.latent
          << ',' << r.config.heads << ',' << r.config.decoder_depth << ','
          << r.config.embed << ',' << fmt(r.valid_mse) << ',' << r.param_count
          << '\n';
    }
  }
  const fs::path best = dir / "best.json";
  {
    json b{{"sample", res.best_sample},
           {"curve", curve_name(res.best.curve)},
           {"hidden", res.best.latent},
           {"heads", res.best.heads},
           {"depth", res.best.decoder_depth},
           {"embed", res.best.embed}};
    std::ofstream out(best);
    out << b.dump(2) << '\n';
  }

  json cfg{{"data", a.base.data},
           {"budget", a.budget},
           {"train", train_json(tc)},
           {"folding", fold_json(fa)},
           {"seed", a.base.seed},
           {"normalize", a.base.normalize}};
  write_manifest(dir, "search", cfg, {a.base.data}, {csv.string(), best.string()},
                 timer.seconds(),
                 json{{"samples", res.rows.size()}, {"best_sample", res.best_sample}});
  std::cout << "search: " << res.rows.size() << " of " << space.combinations()
            << " configs, best sample " << res.best_sample << " ("
            << curve_name(res.best.curve) << ", hidden " << res.best.latent
            << ", heads " << res.best.heads << ", depth " << res.best.decoder_depth
            << ", embed " << res.best.embed << ")\n";
  return 0;
}

// ---- eval / predict / bench --------------------------------------------

struct CheckpointArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string split = "test";  // train, valid, test or all
  FoldArgs folds;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool fold_given = false;
};

void add_checkpoint_flags(CLI::App* sub, CheckpointArgs& a) {
  sub->add_option("--checkpoint", a.checkpoint, "model checkpoint JSON")->required();
  sub->add_option("--data", a.data, "task-split JSONL dataset")->required();
  sub->add_option("--split", a.split, "train, valid, test or all")
      ->capture_default_str();
  add_fold_flags(sub, a.folds);
  sub->add_option("--seed", a.seed,
                  "fold seed; defaults to the one stored in the checkpoint")
      ->capture_default_str();
}

// Instances the checkpoint should see, with inputs (and targets) z-scored
// when the checkpoint carries statistics.
std::vector<const IMTSInstance*> checkpoint_split(const Dataset& ds,
                                                  const Checkpoint& cp,
                                                  CheckpointArgs& a,
                                                  Dataset& holder) {
  if (ds.channels != cp.config.channels) {
    throw ValidationError("dataset has " + std::to_string(ds.channels) +
                          " channels, checkpoint expects " +
                          std::to_string(cp.config.channels));
  }
  holder = cp.normalization ? normalize_apply(ds, *cp.normalization) : ds;
  if (a.split == "all") {
    std::vector<const IMTSInstance*> out;
    for (const auto& inst : holder.instances) out.push_back(&inst);
    return out;
  }
  if (!a.seed_given) a.seed = cp.seed;
  if (!a.fold_given) a.folds.fold = cp.fold;
  FoldSplit fold = pick_fold(holder, a.folds, a.seed);
  const std::vector<std::string>* ids = nullptr;
  if (a.split == "train") {
    ids = &fold.train;
  } else if (a.split == "valid") {
    ids = &fold.valid;
  } else if (a.split == "test") {
    ids = &fold.test;
  } else {
    throw ValidationError("unknown split '" + a.split +
                          "' (expected train, valid, test or all)");
  }
  return select_instances(holder, *ids);
}

int cmd_eval(CheckpointArgs a) {
  Timer timer;
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  Dataset ds = load_dataset(a.data);
  require_queries(ds);
  Dataset holder;
  const auto split = checkpoint_split(ds, cp, a, holder);

  EvalResult res = evaluate(cp.params, cp.config, split);

  const fs::path dir = ensure_out_dir(a.out);
  const fs::path report = dir / "eval.json";
  {
    json per = json::array();
    for (const auto& pi : res.per_instance) {
      per.push_back(json{{"id", pi.id}, {"mse", pi.mse}, {"count", pi.count}});
    }
    json j{{"split", a.split},
           {"mse", res.mse},
           {"count", res.count},
           {"normalized", cp.normalization.has_value()},
           {"per_instance", std::move(per)}};
    std::ofstream out(report);
    out << j.dump(2) << '\n';
  }

  json cfg{{"checkpoint", a.checkpoint}, {"data", a.data},     {"split", a.split},
           {"folding", fold_json(a.folds)}, {"seed", a.seed}};
  write_manifest(dir, "eval", cfg, {a.checkpoint, a.data}, {report.string()},
                 timer.seconds(),
                 json{{"mse", res.mse}, {"count", res.count}});
  std::cout << "eval: " << a.split << " MSE " << fmt(res.mse) << " over "
            << res.count << " targets (" << split.size() << " instances)\n";
  return 0;
}

int cmd_predict(CheckpointArgs a) {
  Timer timer;
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  Dataset ds = load_dataset(a.data);
  require_queries(ds);
  Dataset holder;
  const auto split = checkpoint_split(ds, cp, a, holder);

  const fs::path dir = ensure_out_dir(a.out);
  const fs::path csv = dir / "predictions.csv";
  long rows = 0;
  {
    std::ofstream out(csv);
    out << "id,query_time,channel,target,prediction\n";
    for (const IMTSInstance* inst : split) {
      const std::vector<double> preds = predict_values(*inst, cp.params, cp.config);
      const IMTSInstance& raw = ds.by_id(inst->id);  // original-scale targets
      for (int k = 0; k < inst->n_query(); ++k) {
        for (int c = 0; c < inst->channels; ++c) {
          double pred = preds[static_cast<std::size_t>(k) * inst->channels + c];
          if (cp.normalization) {
            pred = pred * cp.normalization->stdev[static_cast<std::size_t>(c)] +
                   cp.normalization->mean[static_cast<std::size_t>(c)];
          }
          const double target = raw.target_at(k, c);
          out << inst->id << ',' << fmt(inst->query_times[static_cast<std::size_t>(k)])
              << ',' << cp.channel_names[static_cast<std::size_t>(c)] << ','
              << (std::isnan(target) ? std::string() : fmt(target)) << ','
              << fmt(pred) << '\n';
          ++rows;
        }
      }
    }
  }

  json cfg{{"checkpoint", a.checkpoint}, {"data", a.data},     {"split", a.split},
           {"folding", fold_json(a.folds)}, {"seed", a.seed}};
  write_manifest(dir, "predict", cfg, {a.checkpoint, a.data}, {csv.string()},
                 timer.seconds(), json{{"rows", rows}});
  std::cout << "predict: wrote " << rows << " rows for " << split.size()
            << " instances to " << csv.string() << "\n";
  return 0;
}

struct BenchArgs {
  CheckpointArgs common;
  int batch = 64;
  int warmup = 2;
  int passes = 5;
};

int cmd_bench(BenchArgs a) {
  Timer timer;
  const Checkpoint cp = load_checkpoint(a.common.checkpoint);
  Dataset ds = load_dataset(a.common.data);
  require_queries(ds);
  Dataset holder;
  a.common.split = a.common.split.empty() ? "all" : a.common.split;
  const auto split = checkpoint_split(ds, cp, a.common, holder);
  if (a.batch < 1) throw ValidationError("bench: --batch must be >= 1");
  if (a.warmup < 0) throw ValidationError("bench: --warmup must be >= 0");
  if (a.passes < 1) throw ValidationError("bench: --passes must be >= 1");

  long predictions = 0;
  auto one_pass = [&]() {
    long made = 0;
    for (std::size_t begin = 0; begin < split.size();
         begin += static_cast<std::size_t>(a.batch)) {
      const std::size_t end =
          std::min(split.size(), begin + static_cast<std::size_t>(a.batch));
      for (std::size_t i = begin; i < end; ++i) {
        made += static_cast<long>(predict_values(*split[i], cp.params, cp.config).size());
      }
    }
    return made;
  };

  for (int w = 0; w < a.warmup; ++w) predictions = one_pass();
  std::vector<double> samples;
  for (int m = 0; m < a.passes; ++m) {
    Timer t;
    predictions = one_pass();
    samples.push_back(t.seconds());
  }
  const double med = median(samples);
  const double lo = *std::min_element(samples.begin(), samples.end());
  const double hi = *std::max_element(samples.begin(), samples.end());
  const double rate = med > 0.0 ? static_cast<double>(split.size()) / med : 0.0;

  const fs::path dir = ensure_out_dir(a.common.out);
  const fs::path report = dir / "bench.json";
  {
    json j{{"batch", a.batch},
           {"warmup", a.warmup},
           {"passes", a.passes},
           {"samples_seconds", samples},
           {"median_seconds", med},
           {"min_seconds", lo},
           {"max_seconds", hi},
           {"instances", split.size()},
           {"predictions", predictions},
           {"instances_per_second", rate},
           {"param_count", cp.params.parameter_count()}};
    std::ofstream out(report);
    out << j.dump(2) << '\n';
  }

  json cfg{{"checkpoint", a.common.checkpoint},
           {"data", a.common.data},
           {"split", a.common.split},
           {"batch", a.batch},
           {"warmup", a.warmup},
           {"passes", a.passes}};
  write_manifest(dir, "bench", cfg, {a.common.checkpoint, a.common.data},
                 {report.string()}, timer.seconds(),
                 json{{"median_seconds", med}, {"instances_per_second", rate}});
  std::cout << "bench: " << split.size() << " instances, batch " << a.batch
            << ": median " << fmt(med) << " s over " << a.passes << " passes ["
            << fmt(lo) << ", " << fmt(hi) << "], " << fmt(rate)
            << " instances/s, " << cp.params.parameter_count() << " parameters\n";
  return 0;
}

// ---- gradcheck -----------------------------------------------------------

struct GradcheckArgs {
  std::string curve = "sine";
  std::uint64_t seed = 4;
  double eps = 1e-5;
  double tol = 1e-4;
  bool corrupt = false;
  std::string out;
};

// Fixture: C=2, 12 observations, 4 queries, L=32, H=4, D=4, two decoder
// layers. The per-head linear embedding offsets have exactly zero loss
// gradient (they shift whole softmax rows), so central differences measure
// pure cancellation noise there, and that noise scales with the loss
// magnitude. Small-amplitude values keep it orders of magnitude below the
// tolerance for every seed while leaving all nonzero gradients measurable.
IMTSInstance gradcheck_instance(std::uint64_t seed) {
  Rng rng(seed);
  IMTSInstance inst;
  inst.id = "gradcheck";
  inst.channels = 2;
  double t = rng.uniform(0.0, 0.3);
  for (int k = 0; k < 12; ++k) {
    inst.times.push_back(t);
    t += 0.05 + rng.uniform(0.0, 0.4);
    for (int c = 0; c < 2; ++c) {
      inst.values.push_back(rng.uniform() < 0.15 ? std::nan("")
                                                 : rng.uniform(-0.05, 0.05));
    }
  }
  for (int k = 0; k < 4; ++k) {
    inst.query_times.push_back(t);
    t += 0.05 + rng.uniform(0.0, 0.4);
    for (int c = 0; c < 2; ++c) {
      inst.targets.push_back(rng.uniform() < 0.15 ? std::nan("")
                                                  : rng.uniform(-0.05, 0.05));
    }
  }
  inst.values[0] = 0.02;
  inst.targets[0] = -0.03;
  validate_instance(inst);
  return inst;
}

// Smallest bias shift that moves every preactivation in `pre` (one hidden
// unit, one value per query row) out of (-margin, margin).
double kink_clearing_shift(const std::vector<double>& pre, double margin) {
  auto clear = [&](double delta) {
    for (double p : pre) {
      if (std::fabs(p + delta) < margin) return false;
    }
    return true;
  };
  if (clear(0.0)) return 0.0;
  std::vector<double> candidates;
  const double pad = margin * 1.0009765625;  // exact in binary, dodges ties
  for (double p : pre) {
    candidates.push_back(pad - p);
    candidates.push_back(-pad - p);
  }
  std::sort(candidates.begin(), candidates.end(),
            [](double x, double y) { return std::fabs(x) < std::fabs(y); });
  for (double c : candidates) {
    if (clear(c)) return c;
  }
  return candidates.back();  // unreachable: the outermost endpoint always clears
}

// Finite differences land on a ReLU kink whenever a decoder preactivation
// sits within ~eps of zero, turning the comparison into noise that says
// nothing about the tape. The fixture therefore nudges decoder biases until
// every hidden preactivation keeps |pre| > margin, which no eps-sized probe
// can cross.
void clear_relu_kinks(ModelParams& params, const FLDConfig& config,
                      const IMTSInstance& inst, double margin) {
  Tape scratch;  // all inputs untracked: nothing is recorded
  const IMTSInstance scaled = rescale_time_unit(inst);
  const ChannelView view = channelize(scaled);
  const Tensor theta = encode(scratch, view, params, config);
  Tensor h = curve_eval_batch(scratch, scaled.query_times, theta, config.curve);
  const Tensor ones =
      Tensor::column(std::vector<double>(static_cast<std::size_t>(h.rows), 1.0));
  for (std::size_t l = 0; l < params.dec_w.size(); ++l) {
    Tensor pre = scratch.add(scratch.matmul(h, params.dec_w[l]),
                             scratch.matmul(ones, params.dec_b[l]));
    for (int j = 0; j < pre.cols; ++j) {
      std::vector<double> column;
      for (int i = 0; i < pre.rows; ++i) column.push_back(pre.at(i, j));
      const double delta = kink_clearing_shift(column, margin);
      if (delta != 0.0) {
        params.dec_b[l].at(0, j) += delta;
        for (int i = 0; i < pre.rows; ++i) pre.at(i, j) += delta;
      }
    }
    h = scratch.relu(pre);
  }
}

int cmd_gradcheck(const GradcheckArgs& a) {
  Timer timer;
  FLDConfig config;
  config.curve = parse_curve(a.curve);
  config.latent = 32;
  config.heads = 4;
  config.embed = 4;
  config.decoder_depth = 2;
  config.channels = 2;

  const IMTSInstance inst = gradcheck_instance(mix_seed(a.seed, 1));
  ModelParams init = init_params(config, mix_seed(a.seed, 2));
  clear_relu_kinks(init, config, inst, 1e-3);
  std::vector<GradCheckParam> params;
  init.visit([&](const std::string& name, const Tensor& t) {
    params.push_back({name, t});
  });

  auto f = [&](Tape& tape, const std::vector<Tensor>& bound) {
    ModelParams mp = init;
    std::size_t i = 0;
    mp.visit([&](const std::string&, Tensor& t) { t = bound[i++]; });
    Tensor yhat = forward(tape, inst, mp, config);
    Tensor loss = masked_loss(tape, inst.targets, inst.n_query(), inst.channels, yhat);
    if (a.corrupt) {
      // Negative control: an extra term recorded only when the parameters
      // are tracked (the AD pass), so the backward result no longer matches
      // the function the finite differences probe.
      for (const Tensor& b : bound) {
        if (b.node >= 0) loss = tape.add(loss, tape.scale(tape.sum(b), 1e-3));
      }
    }
    return loss;
  };
  const GradCheckResult res = finite_diff_check(f, params, a.eps);

  const bool pass = res.max_rel_err <= a.tol;
  for (const auto& g : res.groups) {
    std::cout << "  " << g.name << ": " << fmt(g.max_rel_err) << "\n";
  }
  std::cout << "gradcheck: curve " << a.curve << ", max rel err "
            << fmt(res.max_rel_err) << (pass ? " <= " : " > ") << fmt(a.tol)
            << " -> " << (pass ? "PASS" : "FAIL") << "\n";

  const fs::path dir = ensure_out_dir(a.out);
  const fs::path report = dir / "gradcheck.json";
  {
    json groups = json::object();
    for (const auto& g : res.groups) groups[g.name] = g.max_rel_err;
    json j{{"curve", a.curve},       {"seed", a.seed},
           {"eps", a.eps},           {"tol", a.tol},
           {"corrupt", a.corrupt},   {"groups", std::move(groups)},
           {"max_rel_err", res.max_rel_err}, {"pass", pass}};
    std::ofstream out(report);
    out << j.dump(2) << '\n';
  }
  write_manifest(dir, "gradcheck",
                 json{{"curve", a.curve}, {"seed", a.seed}, {"eps", a.eps},
                      {"tol", a.tol}, {"corrupt", a.corrupt}},
                 {}, {report.string()}, timer.seconds(),
                 json{{"max_rel_err", res.max_rel_err}, {"pass", pass}});
  return pass ? 0 : 2;
}

void add_common(CLI::App* sub, std::string* out) {
  sub->add_option("--out", *out, "output directory (created if missing)")->required();
  // Consumed by expand_config_args before parsing; registered here for help.
  static std::string config_file;
  sub->add_option("--config", config_file, "JSON config file; explicit flags win");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional latent dynamics: forecasting irregularly sampled "
               "multivariate time series with explicit latent curves"};
  app.set_version_flag("--version", FLD_VERSION);
  app.require_subcommand(1);

  int rc = 0;

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "synthesize a Goodwin-oscillator IMTS dataset");
  g->add_option("--count", gen.count, "number of instances")->required();
  g->add_option("--seed", gen.seed, "generation seed")->capture_default_str();
  g->add_option("--points", gen.points, "observation times per instance")
      ->capture_default_str();
  g->add_option("--sigma", gen.sigma, "observation noise stddev")->capture_default_str();
  g->add_option("--drop", gen.drop, "per-scalar drop probability")->capture_default_str();
  g->add_option("--observe", gen.observe, "species indices to observe (0=X, 1=Y, 2=Z)")
      ->capture_default_str();
  g->add_option("--duration", gen.duration, "integration horizon T")
      ->capture_default_str();
  g->add_option("--step", gen.step, "integrator step h")->capture_default_str();
  add_common(g, &gen.out);
  g->callback([&] { rc = cmd_generate(gen); });

  SplitArgs spl;
  auto* s = app.add_subcommand("split", "apply a forecasting task split to a raw dataset");
  s->add_option("--data", spl.data, "raw JSONL dataset")->required();
  s->add_option("--task", spl.task, "obs75-next3, obs75-fc25 or obs50-fc50")->required();
  add_common(s, &spl.out);
  s->callback([&] { rc = cmd_split(spl); });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one model on one cross-validation fold");
  add_train_flags(t, tr, true);
  add_fold_flags(t, tr.folds);
  add_common(t, &tr.out);
  t->callback([&] { rc = cmd_train(tr); });

  SearchArgs se;
  auto* sr = app.add_subcommand("search",
                                "random hyperparameter search, scored on fold 0");
  add_train_flags(sr, se.base, false);
  add_fold_flags(sr, se.base.folds);
  sr->add_option("--budget", se.budget, "configurations to sample")
      ->capture_default_str();
  add_common(sr, &se.base.out);
  sr->callback([&] { rc = cmd_search(se); });

  CheckpointArgs ev;
  auto* e = app.add_subcommand("eval", "pooled MSE of a checkpoint on a split");
  add_checkpoint_flags(e, ev);
  add_common(e, &ev.out);
  e->callback([&] {
    ev.seed_given = e->count("--seed") > 0;
    ev.fold_given = e->count("--fold") > 0;
    rc = cmd_eval(ev);
  });

  CheckpointArgs pr;
  pr.split = "all";
  auto* p = app.add_subcommand("predict", "export per-query predictions as CSV");
  add_checkpoint_flags(p, pr);
  add_common(p, &pr.out);
  p->callback([&] {
    pr.seed_given = p->count("--seed") > 0;
    pr.fold_given = p->count("--fold") > 0;
    rc = cmd_predict(pr);
  });

  BenchArgs be;
  be.common.split = "all";
  auto* b = app.add_subcommand("bench", "wall-clock timing of full-split inference");
  add_checkpoint_flags(b, be.common);
  b->add_option("--batch", be.batch, "inference batch size")->capture_default_str();
  b->add_option("--warmup", be.warmup, "unmeasured passes")->capture_default_str();
  b->add_option("--passes", be.passes, "measured passes")->capture_default_str();
  add_common(b, &be.common.out);
  b->callback([&] {
    be.common.seed_given = b->count("--seed") > 0;
    be.common.fold_given = b->count("--fold") > 0;
    rc = cmd_bench(be);
  });

  GradcheckArgs gc;
  auto* gr = app.add_subcommand("gradcheck",
                                "compare tape gradients against finite differences");
  gr->add_option("--curve", gc.curve, "curve family to check")->capture_default_str();
  gr->add_option("--seed", gc.seed, "fixture seed")->capture_default_str();
  gr->add_option("--eps", gc.eps, "central-difference step")->capture_default_str();
  gr->add_option("--tol", gc.tol, "max relative error accepted")->capture_default_str();
  gr->add_flag("--corrupt", gc.corrupt,
               "negative control: corrupt the recorded loss so the check must fail");
  add_common(gr, &gc.out);
  gr->callback([&] { rc = cmd_gradcheck(gc); });

  app.name("fld");
  try {
    std::vector<std::string> tokens(argv + 1, argv + argc);
    tokens = expand_config_args(std::move(tokens));
    std::reverse(tokens.begin(), tokens.end());  // CLI11 parses back to front
    app.parse(std::move(tokens));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fld::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const UnsplittableError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
