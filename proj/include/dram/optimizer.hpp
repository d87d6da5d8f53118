#pragma once

#include "dram/tape.hpp"

namespace dram {

/// Nesterov momentum SGD state. velocity mirrors the parameter set.
struct OptimizerState {
  ParamSet velocity;
  Scalar momentum = 0.9;
  Scalar learning_rate = 0.01;
  Scalar decay = 0.97;  ///< learning-rate multiplier applied by end_epoch()

  static OptimizerState for_params(const ParamSet& params, Scalar learning_rate, Scalar momentum,
                                   Scalar decay);
  void end_epoch() { learning_rate *= decay; }
};

/// One Nesterov step, v <- mu v - lr grad(theta + mu v).
///
/// The stored parameters are the look-ahead point phi = theta + mu v, so the
/// gradient passed in is evaluated where the formulation needs it. With that
/// change of variables the update becomes
///   v'   = mu v - lr g
///   phi' = phi - mu v + (1 + mu) v'
void nesterov_step(ParamSet& params, const ParamSet& grads, OptimizerState& state);

}  // namespace dram
