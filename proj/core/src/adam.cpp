#include "cozad/errors.hpp"
#include "cozad/model.hpp"

#include <cmath>

namespace cozad {

AdamState AdamState::for_params(const ModelParams& params) {
  AdamState state;
  state.first_moment = ParamGrads::zeros_like(params);
  state.second_moment = ParamGrads::zeros_like(params);
  return state;
}

bool AdamState::operator==(const AdamState& other) const {
  return beta1 == other.beta1 && beta2 == other.beta2 && eps == other.eps &&
         step == other.step && flatten(first_moment) == flatten(other.first_moment) &&
         flatten(second_moment) == flatten(other.second_moment);
}

void adam_step(AdamState& state, ModelParams& params, const ParamGrads& grads, double lr_adaptor,
               double lr_disc, double weight_decay) {
  auto p = trainable_blocks(params);
  const auto g = trainable_blocks(grads);
  auto m = trainable_blocks(state.first_moment);
  auto v = trainable_blocks(state.second_moment);

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(state.beta1, t);
  const double bias2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t b = 0; b < p.size(); ++b) {
    require(g[b].values.size() == p[b].values.size() && m[b].values.size() == p[b].values.size(),
            std::string("adam_step: shape mismatch in ") + std::string(p[b].name));
    const double lr = p[b].group == ParamGroup::kAdaptor ? lr_adaptor : lr_disc;
    for (std::size_t i = 0; i < p[b].values.size(); ++i) {
      const double grad = g[b].values[i] + weight_decay * p[b].values[i];
      double& m1 = m[b].values[i];
      double& m2 = v[b].values[i];
      m1 = state.beta1 * m1 + (1.0 - state.beta1) * grad;
      m2 = state.beta2 * m2 + (1.0 - state.beta2) * grad * grad;
      const double m_hat = m1 / bias1;
      const double v_hat = m2 / bias2;
      p[b].values[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

}  // namespace cozad
