#include "fld/goodwin.hpp"

#include <algorithm>
#include <cmath>

#include "fld/errors.hpp"
#include "fld/rng.hpp"

namespace fld {

void GoodwinParams::validate() const {
  for (double k : {k1, k2, k3, k4, k5, k6}) {
    if (!(k > 0.0)) throw ValidationError("goodwin: rate constants must be > 0");
  }
  if (!(hill >= 1.0)) throw ValidationError("goodwin: hill exponent must be >= 1");
  if (!(michaelis > 0.0)) throw ValidationError("goodwin: michaelis constant must be > 0");
  for (double v : init) {
    if (!(v >= 0.0)) throw ValidationError("goodwin: initial state must be >= 0");
  }
  if (!(duration > 0.0)) throw ValidationError("goodwin: duration must be > 0");
  if (!(step > 0.0) || step > duration / 100.0) {
    throw ValidationError("goodwin: step must be in (0, duration/100]");
  }
}

std::array<double, 3> goodwin_deriv(const GoodwinParams& p,
                                    const std::array<double, 3>& s) {
  const double zn = std::pow(s[2], p.hill);
  return {p.k1 / (p.michaelis + zn) - p.k2 * s[0],
          p.k3 * s[0] - p.k4 * s[1],
          p.k5 * s[1] - p.k6 * s[2]};
}

namespace {

std::array<double, 3> rk4_step(const GoodwinParams& p,
                               const std::array<double, 3>& s, double h) {
  const auto k1 = goodwin_deriv(p, s);
  std::array<double, 3> mid;
  for (int i = 0; i < 3; ++i) mid[i] = s[i] + 0.5 * h * k1[i];
  const auto k2 = goodwin_deriv(p, mid);
  for (int i = 0; i < 3; ++i) mid[i] = s[i] + 0.5 * h * k2[i];
  const auto k3 = goodwin_deriv(p, mid);
  std::array<double, 3> end;
  for (int i = 0; i < 3; ++i) end[i] = s[i] + h * k3[i];
  const auto k4 = goodwin_deriv(p, end);
  std::array<double, 3> out;
  for (int i = 0; i < 3; ++i) {
    out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return out;
}

void settle(std::array<double, 3>& s, double t) {
  for (double& v : s) {
    if (!std::isfinite(v)) {
      throw NumericError("goodwin: non-finite state at t=" + std::to_string(t));
    }
    if (v < 0.0) {
      if (v < -1e-9) {
        throw NumericError("goodwin: state escaped the positive orthant at t=" +
                           std::to_string(t));
      }
      v = 0.0;
    }
  }
}

}  // namespace

Trajectory integrate_goodwin(const GoodwinParams& p) {
  p.validate();
  Trajectory traj;
  std::array<double, 3> s = p.init;
  double t = 0.0;
  traj.times.push_back(t);
  traj.states.push_back(s);
  while (t < p.duration) {
    const double h = std::min(p.step, p.duration - t);
    s = rk4_step(p, s, h);
    t += h;
    settle(s, t);
    traj.times.push_back(t);
    traj.states.push_back(s);
  }
  traj.times.back() = p.duration;  // kill accumulated rounding
  return traj;
}

std::vector<std::array<double, 3>> rk4_integrate(const GoodwinParams& p,
                                                 const std::vector<double>& grid) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || grid[i] > p.duration) {
      throw ValidationError("rk4_integrate: grid time " + std::to_string(grid[i]) +
                            " outside [0, " + std::to_string(p.duration) + "]");
    }
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw ValidationError("rk4_integrate: grid must be strictly increasing");
    }
  }
  const Trajectory traj = integrate_goodwin(p);
  std::vector<std::array<double, 3>> out;
  out.reserve(grid.size());
  std::size_t seg = 0;
  for (double t : grid) {
    while (seg + 2 < traj.times.size() && traj.times[seg + 1] < t) ++seg;
    const double t0 = traj.times[seg];
    const double t1 = traj.times[seg + 1];
    const double w = t1 > t0 ? std::clamp((t - t0) / (t1 - t0), 0.0, 1.0) : 0.0;
    std::array<double, 3> v;
    for (int i = 0; i < 3; ++i) {
      v[i] = (1.0 - w) * traj.states[seg][i] + w * traj.states[seg + 1][i];
    }
    out.push_back(v);
  }
  return out;
}

void SamplingSpec::validate() const {
  if (points_per_instance < 1) {
    throw ValidationError("sampling: points_per_instance must be >= 1");
  }
  if (noise_sigma < 0.0) throw ValidationError("sampling: noise sigma must be >= 0");
  if (drop_prob < 0.0 || drop_prob >= 1.0) {
    throw ValidationError("sampling: drop_prob must be in [0, 1)");
  }
  if (observe.empty()) throw ValidationError("sampling: no observed species");
  for (int s : observe) {
    if (s < 0 || s > 2) {
      throw ValidationError("sampling: species index must be 0 (X), 1 (Y) or 2 (Z)");
    }
  }
}

namespace {
const char* kSpecies[3] = {"X", "Y", "Z"};
}  // namespace

GoodwinParams draw_params(const GoodwinParams& nominal, Rng& rng) {
  GoodwinParams p = nominal;
  for (double* k : {&p.k1, &p.k2, &p.k3, &p.k4, &p.k5, &p.k6, &p.michaelis}) {
    *k = rng.log_uniform(0.5 * *k, 1.5 * *k);
  }
  for (double& v : p.init) {
    if (v > 0.0) v = rng.log_uniform(0.5 * v, 1.5 * v);
  }
  return p;
}

Dataset generate_goodwin(int count, std::uint64_t seed,
                         const SamplingSpec& sampling,
                         const GoodwinParams& nominal) {
  if (count < 1) throw ValidationError("generate: count must be >= 1");
  sampling.validate();
  nominal.validate();

  Dataset ds;
  ds.channels = static_cast<int>(sampling.observe.size());
  for (int s : sampling.observe) ds.channel_names.push_back(kSpecies[s]);

  for (int idx = 0; idx < count; ++idx) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(idx)));
    IMTSInstance inst;
    for (int attempt = 0;; ++attempt) {
      try {
        const GoodwinParams p = draw_params(nominal, rng);
        std::vector<double> times(sampling.points_per_instance);
        for (double& t : times) t = rng.uniform(0.0, p.duration);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());

        const auto states = rk4_integrate(p, times);
        inst = IMTSInstance{};
        inst.channels = ds.channels;
        for (std::size_t k = 0; k < times.size(); ++k) {
          std::vector<double> row;
          bool any = false;
          for (int c = 0; c < ds.channels; ++c) {
            double v = states[k][static_cast<std::size_t>(sampling.observe[c])];
            if (sampling.noise_sigma > 0.0) {
              v += sampling.noise_sigma * rng.normal();
            }
            if (sampling.drop_prob > 0.0 && rng.uniform() < sampling.drop_prob) {
              row.push_back(std::nan(""));
            } else {
              row.push_back(v);
              any = true;
            }
          }
          if (!any) continue;
          inst.times.push_back(times[k]);
          inst.values.insert(inst.values.end(), row.begin(), row.end());
        }
        if (inst.times.empty()) {
          throw NumericError("every observation dropped");
        }
        break;
      } catch (const NumericError&) {
        if (attempt >= 8) throw;  // this parameter region is hopeless
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "goodwin-%06d", idx);
    inst.id = id;
    validate_instance(inst);
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

}  // namespace fld
