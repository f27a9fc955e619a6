#include "lenctl/nnet/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lenctl::nnet {

void TrainHyper::validate() const {
  if (!(lr_init >= 0) || !(lr_peak > 0)) throw std::invalid_argument("learning rates must be positive");
  if (warmup < 1) throw std::invalid_argument("warmup must be >= 1");
  if (dropout < 0 || dropout >= 1) throw std::invalid_argument("dropout must be in [0, 1)");
  if (attention_dropout < 0 || attention_dropout >= 1)
    throw std::invalid_argument("attention dropout must be in [0, 1)");
  if (smoothing < 0 || smoothing >= 1) throw std::invalid_argument("label smoothing must be in [0, 1)");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw std::invalid_argument("Adam betas must be in [0, 1)");
  if (!(eps > 0)) throw std::invalid_argument("Adam eps must be positive");
  if (accumulate < 1) throw std::invalid_argument("accumulate must be >= 1");
}

double lr_schedule(const TrainHyper& h, std::int64_t step) {
  if (step < 0) step = 0;
  if (h.warmup < 1) throw std::invalid_argument("warmup must be >= 1");
  if (step <= h.warmup) {
    return h.lr_init + (h.lr_peak - h.lr_init) * static_cast<double>(step) / static_cast<double>(h.warmup);
  }
  return h.lr_peak * std::sqrt(static_cast<double>(h.warmup) / static_cast<double>(step));
}

template <typename Real>
void adam_step(ParameterSet<Real>& params, AdamState<Real>& state, const TrainHyper& h, double lr,
               double grad_scale) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].grad.all_finite()) {
      throw NonFiniteError("non-finite gradient in parameter '" + params[i].name + "'");
    }
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].value.size(), Real(0));
      state.v[i].assign(params[i].value.size(), Real(0));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const double inv = 1.0 / grad_scale;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.value.size()) {
      throw ShapeError("optimizer state does not match parameter '" + p.name + "'");
    }
    Real* w = p.value.data();
    const Real* g = p.grad.data();
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = static_cast<double>(g[j]) * inv;
      const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      w[j] -= static_cast<Real>(lr * (mj / c1) / (std::sqrt(vj / c2) + h.eps));
    }
  }
}

template void adam_step<float>(ParameterSet<float>&, AdamState<float>&, const TrainHyper&, double, double);
template void adam_step<double>(ParameterSet<double>&, AdamState<double>&, const TrainHyper&, double, double);

}  // namespace lenctl::nnet
