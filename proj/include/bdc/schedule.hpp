#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include "bdc/tensor.hpp"

namespace bdc {

// Discrete diffusion schedule. alpha_bar is indexed 0..K with
// alpha_bar[0] == 1 exactly; noising steps are 1..K.
struct NoiseSchedule {
  int steps = 0;                  // K
  std::vector<double> alpha_bar;  // K + 1 entries, strictly decreasing
};

// Square-cosine schedule: f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2) with
// s = 0.008, normalized by f(0); per-step betas are clamped at 0.999 and
// alpha_bar is rebuilt from the clamped betas.
inline NoiseSchedule build_cosine_schedule(int K) {
  if (K < 1) throw std::runtime_error("build_cosine_schedule: K must be >= 1");
  constexpr double s = 0.008;
  constexpr double half_pi = 1.5707963267948966192313216916398;
  auto f = [&](int k) {
    const double x = ((static_cast<double>(k) / K + s) / (1.0 + s)) * half_pi;
    const double c = std::cos(x);
    return c * c;
  };
  const double f0 = f(0);
  NoiseSchedule sched;
  sched.steps = K;
  sched.alpha_bar.assign(static_cast<std::size_t>(K) + 1, 0.0);
  sched.alpha_bar[0] = 1.0;
  double prev_raw = 1.0;
  double acc = 1.0;
  for (int k = 1; k <= K; ++k) {
    const double raw = f(k) / f0;
    double beta = 1.0 - raw / prev_raw;
    if (beta > 0.999) beta = 0.999;
    prev_raw = raw;
    acc *= 1.0 - beta;
    sched.alpha_bar[static_cast<std::size_t>(k)] = acc;
  }
  return sched;
}

namespace detail {
inline void check_k(const NoiseSchedule& sched, int k, const char* who) {
  if (k < 0 || k > sched.steps)
    throw std::runtime_error(std::string(who) + ": diffusion step out of range");
}
}  // namespace detail

// x_k = sqrt(alpha_bar_k) * x0 + sqrt(1 - alpha_bar_k) * eps.
// k = 0 is the zero-noise endpoint and returns x0.
template <class S>
Tensor<S> forward_noise(const Tensor<S>& x0, const Tensor<S>& eps, int k,
                        const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape())
    throw std::runtime_error("forward_noise: x0 and eps shapes differ");
  detail::check_k(sched, k, "forward_noise");
  bool out_of_range = false;
  for (std::size_t i = 0; i < x0.numel(); ++i)
    if (std::fabs(static_cast<double>(x0.data()[i])) > 1.0 + 1e-9)
      out_of_range = true;
  if (out_of_range)
    std::fprintf(stderr, "forward_noise: warning, x0 outside [-1, 1]\n");
  const double ab = sched.alpha_bar[static_cast<std::size_t>(k)];
  const S ca = static_cast<S>(std::sqrt(ab));
  const S ce = static_cast<S>(std::sqrt(1.0 - ab));
  std::vector<S> out(x0.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = ca * x0.data()[i] + ce * eps.data()[i];
  return Tensor<S>::from(x0.shape(), std::move(out));
}

// One deterministic DDIM update (eta = 0) under the sample parameterization:
// the model output x0_hat is clamped to [-1, 1] (when clip is set), the
// implied noise is recovered from x_k, and the pair is recombined at k_prev.
// k_prev = 0 returns the clamped x0_hat exactly because alpha_bar[0] = 1.
template <class S>
Tensor<S> ddim_step(const Tensor<S>& x_k, const Tensor<S>& x0_hat, int k,
                    int k_prev, const NoiseSchedule& sched, bool clip = true) {
  if (x_k.shape() != x0_hat.shape())
    throw std::runtime_error("ddim_step: shape mismatch");
  if (k_prev >= k) throw std::runtime_error("ddim_step: k_prev must be < k");
  if (k_prev < 0 || k > sched.steps)
    throw std::runtime_error("ddim_step: step pair out of range");
  const double ab_k = sched.alpha_bar[static_cast<std::size_t>(k)];
  const double ab_p = sched.alpha_bar[static_cast<std::size_t>(k_prev)];
  const S sqrt_ab_k = static_cast<S>(std::sqrt(ab_k));
  const S inv_sig_k = static_cast<S>(1.0 / std::sqrt(1.0 - ab_k));
  const S sqrt_ab_p = static_cast<S>(std::sqrt(ab_p));
  const S sig_p = static_cast<S>(std::sqrt(1.0 - ab_p));
  std::vector<S> out(x_k.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    S x0 = x0_hat.data()[i];
    if (clip) x0 = std::min(S(1), std::max(S(-1), x0));
    const S eps_hat = (x_k.data()[i] - sqrt_ab_k * x0) * inv_sig_k;
    out[i] = sqrt_ab_p * x0 + sig_p * eps_hat;
  }
  return Tensor<S>::from(x_k.shape(), std::move(out));
}

// Strictly decreasing step sequence ending at 0; consumed pairwise as
// (k, k_prev).
struct InferenceTimesteps {
  std::vector<int> steps;

  int pairs() const { return static_cast<int>(steps.size()) - 1; }
  int k(int i) const { return steps[static_cast<std::size_t>(i)]; }
  int k_prev(int i) const { return steps[static_cast<std::size_t>(i) + 1]; }
};

inline InferenceTimesteps make_inference_timesteps(int K, int S) {
  if (S < 1 || S > K)
    throw std::runtime_error("make_inference_timesteps: need 1 <= S <= K");
  InferenceTimesteps ts;
  for (int i = S; i >= 1; --i) {
    const int step = static_cast<int>((static_cast<long long>(i) * K) / S);
    if (ts.steps.empty() || ts.steps.back() != step) ts.steps.push_back(step);
  }
  if (ts.steps.back() != 0) ts.steps.push_back(0);
  return ts;
}

}  // namespace bdc
