#pragma once

// Linear noise schedule and the closed-form forward (q-sample) process.

#include <cmath>
#include <vector>

#include "tactsynth/common.hpp"
#include "tactsynth/tensor.hpp"

namespace tactsynth {

struct NoiseSchedule {
  int T = 1000;
  std::vector<double> beta;       // beta[t], t in [1, T]; beta[0] unused
  std::vector<double> alpha_bar;  // cumulative product, alpha_bar[0] = 1

  static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4,
                              double beta_end = 2e-2) {
    if (T < 1 || beta_start <= 0.0 || beta_end >= 1.0 ||
        beta_start > beta_end)
      fail(ErrorCode::BadConfig, "invalid linear schedule parameters");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(T + 1, 0.0);
    s.alpha_bar.assign(T + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
      s.beta[t] = T == 1 ? beta_start
                         : beta_start + (beta_end - beta_start) * (t - 1) /
                               static_cast<double>(T - 1);
      s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
    }
    return s;
  }

  double sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar[t]); }
  double sqrt_one_minus_alpha_bar(int t) const {
    return std::sqrt(1.0 - alpha_bar[t]);
  }

  void check(int t) const {
    if (t < 0 || t > T) fail(ErrorCode::BadConfig, "timestep out of range");
  }
};

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps
template <typename T>
inline Tensor3<T> forward_noise(const Tensor3<T>& z0, int t,
                                const Tensor3<T>& eps,
                                const NoiseSchedule& sched) {
  sched.check(t);
  require_same_shape(z0, eps, "forward_noise");
  const T a = static_cast<T>(sched.sqrt_alpha_bar(t));
  const T b = static_cast<T>(sched.sqrt_one_minus_alpha_bar(t));
  Tensor3<T> out(z0.c, z0.h, z0.w);
  for (size_t i = 0; i < z0.size(); ++i) out.v[i] = a * z0.v[i] + b * eps.v[i];
  return out;
}

inline double forward_noise_scalar(double z0, int t, double eps,
                                   const NoiseSchedule& sched) {
  sched.check(t);
  return sched.sqrt_alpha_bar(t) * z0 +
         sched.sqrt_one_minus_alpha_bar(t) * eps;
}

}  // namespace tactsynth
