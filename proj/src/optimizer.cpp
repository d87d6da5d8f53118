#include "dram/optimizer.hpp"

#include <stdexcept>

namespace dram {

OptimizerState OptimizerState::for_params(const ParamSet& params, Scalar learning_rate, Scalar momentum,
                                          Scalar decay) {
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw std::invalid_argument("momentum must be in [0, 1)");
  OptimizerState s;
  s.velocity = params.zeros_like();
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.decay = decay;
  return s;
}

void nesterov_step(ParamSet& params, const ParamSet& grads, OptimizerState& state) {
  if (grads.size() != params.size() || state.velocity.size() != params.size())
    throw DimensionError("optimizer: parameter, gradient and velocity sets differ in size");
  const Scalar mu = state.momentum;
  const Scalar lr = state.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& v = state.velocity[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape() || v.shape() != p.shape())
      throw DimensionError("optimizer: shape mismatch for " + params.name(i));
    for (std::size_t j = 0; j < p.size(); ++j) {
      const Scalar v_old = v[j];
      const Scalar v_new = mu * v_old - lr * g[j];
      v[j] = v_new;
      p[j] += -mu * v_old + (1 + mu) * v_new;
    }
  }
}

}  // namespace dram
