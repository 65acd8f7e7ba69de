#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fld/data.hpp"
#include "fld/tape.hpp"
#include "fld/tensor.hpp"

namespace fld {

// The latent trajectory is an explicit parametric curve; the choice fixes
// how many coefficient rows R the encoder must produce per latent dim:
//   linear     theta1 * t + theta2                      R = 2
//   quadratic  theta1 * t^2 + theta2 * t + theta3       R = 3
//   sine       theta1 * sin(theta2 + theta3 * t) + theta4  R = 4
enum class CurveKind { Linear, Quadratic, Sine };

int coeff_rows(CurveKind kind);
std::string curve_name(CurveKind kind);
CurveKind parse_curve(const std::string& text);  // ValidationError

struct FLDConfig {
  CurveKind curve = CurveKind::Linear;
  int latent = 32;         // L, width of the latent curve and decoder
  int heads = 4;           // H, attention heads
  int embed = 4;           // D, time-embedding dims per head
  int decoder_depth = 2;   // hidden layers in the decoder, >= 1
  int channels = 0;        // C, set from the dataset

  int rows() const { return coeff_rows(curve); }
  void validate() const;
};

struct ModelParams {
  Tensor embed_a;               // H x D, time embedding slopes/frequencies
  Tensor embed_b;               // H x D, offsets/phases
  std::vector<Tensor> query;    // per head: R x D
  Tensor ff_w;                  // (H*C) x L, coefficient mixing
  Tensor ff_b;                  // 1 x L
  std::vector<Tensor> dec_w;    // decoder hidden layers: L x L
  std::vector<Tensor> dec_b;    // 1 x L
  Tensor out_w;                 // L x C
  Tensor out_b;                 // 1 x C

  long parameter_count() const;

  // Calls fn(name, tensor) over all parameters in a fixed order; the order
  // defines gradient vectors, optimizer state and checkpoint layout.
  template <typename Fn>
  void visit(Fn&& fn) {
    visit_impl(*this, fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    visit_impl(*this, fn);
  }

 private:
  template <typename Self, typename Fn>
  static void visit_impl(Self& self, Fn& fn) {
    fn("embed_a", self.embed_a);
    fn("embed_b", self.embed_b);
    for (std::size_t h = 0; h < self.query.size(); ++h) {
      fn("query." + std::to_string(h), self.query[h]);
    }
    fn("ff.weight", self.ff_w);
    fn("ff.bias", self.ff_b);
    for (std::size_t l = 0; l < self.dec_w.size(); ++l) {
      fn("decoder." + std::to_string(l) + ".weight", self.dec_w[l]);
      fn("decoder." + std::to_string(l) + ".bias", self.dec_b[l]);
    }
    fn("out.weight", self.out_w);
    fn("out.bias", self.out_b);
  }
};

// Zero-filled parameters with the shapes the config demands.
ModelParams allocate_params(const FLDConfig& config);

// Xavier-uniform weights, zero biases. The linear embedding slope starts at
// 1 and sine frequencies are spread over [1, 40] so the heads cover slow and
// fast dynamics from the start; both remain trainable.
ModelParams init_params(const FLDConfig& config, std::uint64_t seed);

// Registers every parameter as a leaf on `tape`; the returned copy carries
// the node ids needed to look up gradients after backward().
ModelParams bind(Tape& tape, const ModelParams& params);

// Time embedding of head `h` at time t: entry 0 is a*t+b, the rest are
// sin(a*t+b). Reference entry point; encode() builds the same values on-tape.
std::vector<double> time_embed(double t, int head, const ModelParams& params,
                               const FLDConfig& config);

// Per-(head, channel) intermediates for inspection; values only.
struct EncodeTrace {
  Tensor theta_hat;               // R x (H*C), head-major concatenation
  std::vector<Tensor> attention;  // [h*C + c] -> R x N_c; empty channels skipped
};

// Attention over each channel's observations with the head's time embedding
// as keys and the raw scalars as values, concatenated head-major /
// channel-minor and mixed by one affine layer into theta (R x L). Channels
// with no observations contribute exactly zero coefficient columns.
Tensor encode(Tape& tape, const ChannelView& view, const ModelParams& params,
              const FLDConfig& config, EncodeTrace* trace = nullptr);

// Latent curve value at a single time; plain reference version.
std::vector<double> curve_eval(double t, const Tensor& theta, CurveKind kind);

// Curve values at all query times as a K x L tensor on the tape.
Tensor curve_eval_batch(Tape& tape, const std::vector<double>& times,
                        const Tensor& theta, CurveKind kind);

// decoder_depth ReLU layers of width L, then a linear map to channel space.
Tensor decode(Tape& tape, const Tensor& z, const ModelParams& params);

// Full model: rescale times so the span covers [0,1], encode the observed
// part, evaluate the curve at the query times, decode. Requires a query
// part; returns K x C.
Tensor forward(Tape& tape, const IMTSInstance& inst, const ModelParams& params,
               const FLDConfig& config);

// forward() without gradient tracking; empty result when there is no query.
std::vector<double> predict_values(const IMTSInstance& inst,
                                   const ModelParams& params,
                                   const FLDConfig& config);

// ---- persistence -------------------------------------------------------

struct Checkpoint {
  FLDConfig config;
  ModelParams params;
  std::vector<std::string> channel_names;
  std::optional<Normalization> normalization;  // stats the model was trained in
  std::string task;                            // task name, "" when unknown
  std::uint64_t seed = 0;
  int fold = -1;
};

// Self-describing JSON; doubles round-trip exactly. Loading validates the
// format version and every tensor's shape against the stored config.
void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fld
