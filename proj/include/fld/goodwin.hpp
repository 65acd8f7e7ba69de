#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fld/data.hpp"

namespace fld {

// Three-variable Goodwin oscillator with Hill-type repression:
//   dX/dt = k1 / (K + Z^n) - k2 * X
//   dY/dt = k3 * X - k4 * Y
//   dZ/dt = k5 * Y - k6 * Z
// With n = 10 the equilibrium is unstable and the system settles on a limit
// cycle, which is what makes the synthetic forecasting task non-trivial.
struct GoodwinParams {
  double k1 = 1.0;
  double k2 = 0.1;
  double k3 = 1.0;
  double k4 = 0.1;
  double k5 = 1.0;
  double k6 = 0.1;
  double hill = 10.0;       // n
  double michaelis = 1.0;   // K
  std::array<double, 3> init = {0.05, 0.1, 1.0};
  double duration = 100.0;  // T
  // Fine enough that linear interpolation between steps stays below 1e-6
  // even on the steep segments of the limit cycle.
  double step = 1e-3;       // h

  void validate() const;
};

std::array<double, 3> goodwin_deriv(const GoodwinParams& p,
                                    const std::array<double, 3>& state);

struct Trajectory {
  std::vector<double> times;
  std::vector<std::array<double, 3>> states;
};

// Classical fixed-step RK4 over [0, duration]; the last step is shortened to
// land exactly on the endpoint. Components that undershoot zero by less than
// 1e-9 (integration round-off against the positive-orthant invariant) are
// clamped to zero; anything worse is reported as an integration failure with
// the failing time.
Trajectory integrate_goodwin(const GoodwinParams& p);

// Fixed-step solution linearly interpolated onto `grid` (increasing, within
// [0, duration]).
std::vector<std::array<double, 3>> rk4_integrate(const GoodwinParams& p,
                                                 const std::vector<double>& grid);

struct SamplingSpec {
  int points_per_instance = 50;
  double noise_sigma = 0.0;         // Gaussian observation noise
  double drop_prob = 0.0;           // per-scalar missingness
  std::vector<int> observe = {0, 1};  // species indices -> channels (X, Y)

  void validate() const;
};

class Rng;

// Rate constants, the Michaelis constant and the (positive) initial states
// drawn log-uniformly within +-50% of the nominal values; the Hill exponent
// stays fixed so every draw oscillates.
GoodwinParams draw_params(const GoodwinParams& nominal, Rng& rng);

// Per instance: parameters via draw_params, then observation times i.i.d.
// uniform over [0, T], sorted. Instance `idx` works entirely from
// Rng(mix_seed(seed, idx)), so generation order never matters. Instances
// whose draw blows up the integrator are resampled a bounded number of
// times.
Dataset generate_goodwin(int count, std::uint64_t seed,
                         const SamplingSpec& sampling,
                         const GoodwinParams& nominal = {});

}  // namespace fld
