#include "mgan/optim.hpp"

#include <cmath>

namespace mgan {

void OptimizerState::validate() const {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(learning_rate >= 0)) throw ConfigError("learning rate must be non-negative");
}

void adam_step(const ParamRefs& params, OptimizerState& state) {
  state.validate();
  for (const auto& [name, p] : params)
    if (!p->grad) throw TrainingError("adam_step: parameter '" + name + "' has no gradient");

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (const auto& [name, p] : params) {
    auto [it, fresh] = state.moments.try_emplace(name);
    Moments& m = it->second;
    if (fresh) {
      m.first = Tensor(p->shape());
      m.second = Tensor(p->shape());
    } else if (m.first.shape() != p->shape() || m.second.shape() != p->shape()) {
      throw TrainingError("adam_step: moment shape mismatch for parameter '" + name + "'");
    }
    const std::vector<double>& g = *p->grad;
    for (Index i = 0; i < p->size(); ++i) {
      const double gi = g[static_cast<std::size_t>(i)];
      m.first[i] = state.beta1 * m.first[i] + (1.0 - state.beta1) * gi;
      m.second[i] = state.beta2 * m.second[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m.first[i] / c1;
      const double vhat = m.second[i] / c2;
      (*p)[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon_adam);
    }
    p->grad.reset();
  }
}

void zero_grad(const ParamRefs& params) {
  for (const auto& entry : params) entry.second->grad.reset();
}

}  // namespace mgan
