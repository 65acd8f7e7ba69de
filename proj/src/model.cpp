#include "fld/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "fld/errors.hpp"
#include "fld/rng.hpp"
#include "json.hpp"

namespace fld {

namespace {
using nlohmann::json;
}

int coeff_rows(CurveKind kind) {
  switch (kind) {
    case CurveKind::Linear: return 2;
    case CurveKind::Quadratic: return 3;
    case CurveKind::Sine: return 4;
  }
  throw ContractError("coeff_rows: unknown curve kind");
}

std::string curve_name(CurveKind kind) {
  switch (kind) {
    case CurveKind::Linear: return "linear";
    case CurveKind::Quadratic: return "quadratic";
    case CurveKind::Sine: return "sine";
  }
  return "";
}

CurveKind parse_curve(const std::string& text) {
  for (CurveKind k : {CurveKind::Linear, CurveKind::Quadratic, CurveKind::Sine}) {
    if (curve_name(k) == text) return k;
  }
  throw ValidationError("unknown curve '" + text +
                        "' (expected linear, quadratic or sine)");
}

void FLDConfig::validate() const {
  if (latent < 1) throw ValidationError("config: latent must be >= 1");
  if (heads < 1) throw ValidationError("config: heads must be >= 1");
  if (embed < 1) throw ValidationError("config: embed must be >= 1");
  if (decoder_depth < 1) {
    throw ValidationError("config: decoder_depth must be >= 1");
  }
  if (channels < 1) throw ValidationError("config: channels must be >= 1");
}

long ModelParams::parameter_count() const {
  long n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams allocate_params(const FLDConfig& config) {
  config.validate();
  const int R = config.rows();
  ModelParams p;
  p.embed_a = Tensor(config.heads, config.embed);
  p.embed_b = Tensor(config.heads, config.embed);
  for (int h = 0; h < config.heads; ++h) p.query.emplace_back(R, config.embed);
  p.ff_w = Tensor(config.heads * config.channels, config.latent);
  p.ff_b = Tensor(1, config.latent);
  for (int l = 0; l < config.decoder_depth; ++l) {
    p.dec_w.emplace_back(config.latent, config.latent);
    p.dec_b.emplace_back(1, config.latent);
  }
  p.out_w = Tensor(config.latent, config.channels);
  p.out_b = Tensor(1, config.channels);
  return p;
}

ModelParams init_params(const FLDConfig& config, std::uint64_t seed) {
  ModelParams p = allocate_params(config);
  Rng rng(seed);
  auto xavier = [&](Tensor& w) {
    const double bound = std::sqrt(6.0 / (w.rows + w.cols));
    for (double& v : w.data) v = rng.uniform(-bound, bound);
  };

  // Slot 0 of each head is the linear embedding dim: slope 1, offset 0.
  // The remaining slots are sine dims whose initial frequencies are spread
  // over [1, 40] across all heads.
  const long sine_slots = static_cast<long>(config.heads) * (config.embed - 1);
  long slot = 0;
  for (int h = 0; h < config.heads; ++h) {
    for (int d = 0; d < config.embed; ++d) {
      if (d == 0) {
        p.embed_a.at(h, d) = 1.0;
      } else {
        p.embed_a.at(h, d) =
            sine_slots > 1 ? 1.0 + 39.0 * static_cast<double>(slot) /
                                       static_cast<double>(sine_slots - 1)
                           : 1.0;
        ++slot;
      }
    }
  }
  for (Tensor& q : p.query) xavier(q);
  xavier(p.ff_w);
  for (Tensor& w : p.dec_w) xavier(w);
  xavier(p.out_w);
  return p;
}

ModelParams bind(Tape& tape, const ModelParams& params) {
  ModelParams bound = params;
  bound.visit([&](const std::string&, Tensor& t) { t = tape.leaf(t); });
  return bound;
}

std::vector<double> time_embed(double t, int head, const ModelParams& params,
                               const FLDConfig& config) {
  if (head < 0 || head >= config.heads) {
    throw ContractError("time_embed: head " + std::to_string(head) +
                        " out of range");
  }
  std::vector<double> out(config.embed);
  for (int d = 0; d < config.embed; ++d) {
    const double pre = params.embed_a.at(head, d) * t + params.embed_b.at(head, d);
    out[d] = d == 0 ? pre : std::sin(pre);
  }
  return out;
}

Tensor encode(Tape& tape, const ChannelView& view, const ModelParams& params,
              const FLDConfig& config, EncodeTrace* trace) {
  if (view.channels() != config.channels) {
    throw ShapeError("encode: view has " + std::to_string(view.channels()) +
                     " channels, config expects " +
                     std::to_string(config.channels));
  }
  const int R = config.rows();
  const int D = config.embed;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(D));

  if (trace) trace->attention.assign(
      static_cast<std::size_t>(config.heads) * config.channels, Tensor());

  std::vector<Tensor> columns;
  columns.reserve(static_cast<std::size_t>(config.heads) * config.channels);
  for (int h = 0; h < config.heads; ++h) {
    const Tensor a_col = tape.transpose(tape.slice_rows(params.embed_a, h, 1));
    const Tensor b_col = tape.transpose(tape.slice_rows(params.embed_b, h, 1));
    for (int c = 0; c < config.channels; ++c) {
      const int n = static_cast<int>(view.times[c].size());
      if (n == 0) {
        columns.push_back(Tensor(R, 1));  // empty channel: zero coefficients
        continue;
      }
      Tensor t_row = Tensor::row(view.times[c]);
      Tensor ones_row = Tensor::full(1, n, 1.0);
      // Pre-activations a_d * t + b_d for every (dim, observation) pair;
      // dim 0 stays linear, the others go through sin.
      Tensor pre = tape.add(tape.matmul(a_col, t_row), tape.matmul(b_col, ones_row));
      Tensor keys;
      if (D == 1) {
        keys = pre;
      } else {
        Tensor lin_mask(D, n);
        Tensor sin_mask = Tensor::full(D, n, 1.0);
        for (int j = 0; j < n; ++j) {
          lin_mask.at(0, j) = 1.0;
          sin_mask.at(0, j) = 0.0;
        }
        keys = tape.add(tape.mul(lin_mask, pre), tape.mul(sin_mask, tape.sin(pre)));
      }
      Tensor scores = tape.scale(tape.matmul(params.query[h], keys), inv_sqrt_d);
      Tensor att = tape.softmax_rows(scores);
      Tensor v_col = Tensor::column(view.values[c]);
      columns.push_back(tape.matmul(att, v_col));
      if (trace) {
        Tensor a_val = att;
        a_val.node = -1;
        trace->attention[static_cast<std::size_t>(h) * config.channels + c] =
            std::move(a_val);
      }
    }
  }

  Tensor theta_hat = tape.concat_columns(columns);
  if (trace) {
    trace->theta_hat = theta_hat;
    trace->theta_hat.node = -1;
  }
  Tensor ones_col = Tensor::full(R, 1, 1.0);
  return tape.add(tape.matmul(theta_hat, params.ff_w),
                  tape.matmul(ones_col, params.ff_b));
}

std::vector<double> curve_eval(double t, const Tensor& theta, CurveKind kind) {
  if (theta.rows != coeff_rows(kind)) {
    throw ContractError("curve_eval: " + curve_name(kind) + " needs " +
                        std::to_string(coeff_rows(kind)) +
                        " coefficient rows, got " + std::to_string(theta.rows));
  }
  std::vector<double> out(theta.cols);
  for (int l = 0; l < theta.cols; ++l) {
    switch (kind) {
      case CurveKind::Linear:
        out[l] = theta.at(0, l) * t + theta.at(1, l);
        break;
      case CurveKind::Quadratic:
        out[l] = theta.at(0, l) * t * t + theta.at(1, l) * t + theta.at(2, l);
        break;
      case CurveKind::Sine:
        out[l] = theta.at(0, l) * std::sin(theta.at(1, l) + theta.at(2, l) * t) +
                 theta.at(3, l);
        break;
    }
  }
  return out;
}

Tensor curve_eval_batch(Tape& tape, const std::vector<double>& times,
                        const Tensor& theta, CurveKind kind) {
  if (times.empty()) throw ContractError("curve_eval_batch: no times");
  if (theta.rows != coeff_rows(kind)) {
    throw ContractError("curve_eval_batch: " + curve_name(kind) + " needs " +
                        std::to_string(coeff_rows(kind)) +
                        " coefficient rows, got " + std::to_string(theta.rows));
  }
  const int k = static_cast<int>(times.size());
  if (kind == CurveKind::Sine) {
    Tensor ones = Tensor::full(k, 1, 1.0);
    Tensor t_col = Tensor::column(times);
    Tensor amp = tape.slice_rows(theta, 0, 1);
    Tensor phase = tape.slice_rows(theta, 1, 1);
    Tensor freq = tape.slice_rows(theta, 2, 1);
    Tensor offset = tape.slice_rows(theta, 3, 1);
    Tensor angle = tape.add(tape.matmul(ones, phase), tape.matmul(t_col, freq));
    return tape.add(tape.mul(tape.matmul(ones, amp), tape.sin(angle)),
                    tape.matmul(ones, offset));
  }
  // Polynomial curves are one matmul against a fixed basis; the shared
  // monomials keep linear and quadratic bit-compatible when the leading
  // quadratic coefficients are zero.
  const int r = theta.rows;
  Tensor basis(k, r);
  for (int i = 0; i < k; ++i) {
    const double t = times[i];
    if (kind == CurveKind::Quadratic) {
      basis.at(i, 0) = t * t;
      basis.at(i, 1) = t;
      basis.at(i, 2) = 1.0;
    } else {
      basis.at(i, 0) = t;
      basis.at(i, 1) = 1.0;
    }
  }
  return tape.matmul(basis, theta);
}

Tensor decode(Tape& tape, const Tensor& z, const ModelParams& params) {
  if (z.cols != params.out_w.rows) {
    throw ShapeError("decode: latent width " + std::to_string(z.cols) +
                     " does not match decoder width " +
                     std::to_string(params.out_w.rows));
  }
  Tensor ones = Tensor::full(z.rows, 1, 1.0);
  Tensor h = z;
  for (std::size_t l = 0; l < params.dec_w.size(); ++l) {
    h = tape.relu(tape.add(tape.matmul(h, params.dec_w[l]),
                           tape.matmul(ones, params.dec_b[l])));
  }
  return tape.add(tape.matmul(h, params.out_w), tape.matmul(ones, params.out_b));
}

Tensor forward(Tape& tape, const IMTSInstance& inst, const ModelParams& params,
               const FLDConfig& config) {
  if (inst.channels != config.channels) {
    throw ShapeError("forward: instance '" + inst.id + "' has " +
                     std::to_string(inst.channels) + " channels, model expects " +
                     std::to_string(config.channels));
  }
  if (!inst.has_query()) {
    throw ContractError("forward: instance '" + inst.id + "' has no query part");
  }
  IMTSInstance scaled = rescale_time_unit(inst);
  Tensor theta = encode(tape, channelize(scaled), params, config);
  Tensor z = curve_eval_batch(tape, scaled.query_times, theta, config.curve);
  return decode(tape, z, params);
}

std::vector<double> predict_values(const IMTSInstance& inst,
                                   const ModelParams& params,
                                   const FLDConfig& config) {
  if (!inst.has_query()) return {};
  Tape tape;  // records nothing: parameters are unbound constants
  return forward(tape, inst, params, config).data;
}

// ---- persistence -------------------------------------------------------

void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path) {
  cp.config.validate();
  json j;
  j["format_version"] = 1;
  j["config"] = {{"curve", curve_name(cp.config.curve)},
                 {"latent", cp.config.latent},
                 {"heads", cp.config.heads},
                 {"embed", cp.config.embed},
                 {"decoder_depth", cp.config.decoder_depth},
                 {"channels", cp.config.channels}};
  j["channel_names"] = cp.channel_names;
  if (cp.normalization) {
    j["normalization"] = {{"mean", cp.normalization->mean},
                          {"std", cp.normalization->stdev}};
  } else {
    j["normalization"] = nullptr;
  }
  j["time_rescale"] = "per_instance_unit";
  j["task"] = cp.task;
  j["seed"] = cp.seed;
  j["fold"] = cp.fold;
  json params = json::object();
  cp.params.visit([&](const std::string& name, const Tensor& t) {
    params[name] = {{"rows", t.rows}, {"cols", t.cols}, {"data", t.data}};
  });
  j["params"] = std::move(params);

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write checkpoint " + path.string());
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }

  try {
    const int version = j.at("format_version").get<int>();
    if (version != 1) {
      throw ParseError("checkpoint " + path.string() + ": format_version " +
                       std::to_string(version) + " is not supported");
    }
    Checkpoint cp;
    const json& cfg = j.at("config");
    cp.config.curve = parse_curve(cfg.at("curve").get<std::string>());
    cp.config.latent = cfg.at("latent").get<int>();
    cp.config.heads = cfg.at("heads").get<int>();
    cp.config.embed = cfg.at("embed").get<int>();
    cp.config.decoder_depth = cfg.at("decoder_depth").get<int>();
    cp.config.channels = cfg.at("channels").get<int>();
    cp.config.validate();
    cp.channel_names = j.at("channel_names").get<std::vector<std::string>>();
    if (!j.at("normalization").is_null()) {
      Normalization norm;
      norm.mean = j.at("normalization").at("mean").get<std::vector<double>>();
      norm.stdev = j.at("normalization").at("std").get<std::vector<double>>();
      if (static_cast<int>(norm.mean.size()) != cp.config.channels ||
          static_cast<int>(norm.stdev.size()) != cp.config.channels) {
        throw ParseError("checkpoint " + path.string() +
                         ": normalization does not cover every channel");
      }
      cp.normalization = std::move(norm);
    }
    cp.task = j.value("task", "");
    cp.seed = j.value("seed", std::uint64_t{0});
    cp.fold = j.value("fold", -1);

    cp.params = allocate_params(cp.config);
    const json& params = j.at("params");
    cp.params.visit([&](const std::string& name, Tensor& t) {
      if (!params.contains(name)) {
        throw ParseError("checkpoint " + path.string() + ": missing tensor '" +
                         name + "'");
      }
      const json& jt = params.at(name);
      const int rows = jt.at("rows").get<int>();
      const int cols = jt.at("cols").get<int>();
      if (rows != t.rows || cols != t.cols) {
        throw ParseError("checkpoint " + path.string() + ": tensor '" + name +
                         "' is " + shape_str(rows, cols) + ", config requires " +
                         shape_str(t));
      }
      auto data = jt.at("data").get<std::vector<double>>();
      t = Tensor(rows, cols, std::move(data));
      check_finite(t, name.c_str());
    });
    return cp;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace fld
