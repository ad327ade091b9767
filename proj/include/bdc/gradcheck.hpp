#pragma once

#include <cstring>
#include <functional>
#include <vector>

#include "bdc/tensor.hpp"

namespace bdc {

// Builds a scalar loss on the given tape from the given parameters. The
// checker re-invokes it many times, so it must be a pure function of the
// parameter values.
template <class S>
using GraphBuilder =
    std::function<Tensor<S>(Tape<S>&, const std::vector<Tensor<S>>&)>;

namespace detail {

inline double rel_err(double analytic, double numeric) {
  const double denom =
      std::max(std::max(std::fabs(analytic), std::fabs(numeric)), 1e-8);
  return std::fabs(analytic - numeric) / denom;
}

inline double eval_once(const GraphBuilder<double>& f,
                        const std::vector<Tensor<double>>& params) {
  Tape<double> tape(/*recording=*/false);
  return f(tape, params).item();
}

}  // namespace detail

// Central-difference check of backpropagate, in 64-bit. Returns the maximum
// over all parameter coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
//
// Coordinates are wiggled in place (and restored), so the builder may
// either read the passed parameter list or close over tensors sharing the
// same storage, as a model does. The sweep is serial for that reason.
inline double check_gradients(const GraphBuilder<double>& f,
                              const std::vector<Tensor<double>>& params,
                              double step = 1e-3) {
  // Two base evaluations must agree bitwise, otherwise finite differences
  // are meaningless.
  const double base0 = detail::eval_once(f, params);
  const double base1 = detail::eval_once(f, params);
  if (std::memcmp(&base0, &base1, sizeof(double)) != 0)
    throw std::runtime_error("check_gradients: function is non-deterministic");

  Tape<double> tape;
  Tensor<double> loss = f(tape, params);
  GradMap<double> grads = tape.backpropagate(loss);

  std::vector<Tensor<double>> mutated = params;
  double max_err = 0.0;
  for (std::size_t p = 0; p < mutated.size(); ++p) {
    const Tensor<double>& grad_tensor = grads.count(params[p].id())
                                            ? grads.at(params[p].id())
                                            : Tensor<double>();
    for (std::size_t i = 0; i < mutated[p].numel(); ++i) {
      double* slot = mutated[p].mutable_data() + i;
      const double saved = *slot;
      *slot = saved + step;
      const double fp = detail::eval_once(f, params);
      *slot = saved - step;
      const double fm = detail::eval_once(f, params);
      *slot = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic =
          grad_tensor.defined() ? grad_tensor.data()[i] : 0.0;
      max_err = std::max(max_err, detail::rel_err(analytic, numeric));
    }
  }
  return max_err;
}

}  // namespace bdc
