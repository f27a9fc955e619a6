#pragma once

#include <cstdint>
#include <vector>

#include "lenctl/nnet/graph.hpp"

namespace lenctl::nnet {

struct TrainHyper {
  double lr_init = 1e-7;
  double lr_peak = 1e-3;
  std::int64_t warmup = 400;
  double dropout = 0.3;
  double attention_dropout = 0.1;
  double smoothing = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  int accumulate = 1;

  void validate() const;
};

// Linear warmup from lr_init to lr_peak over `warmup` steps, then inverse
// square-root decay. Step 0 gives lr_init.
double lr_schedule(const TrainHyper& h, std::int64_t step);

template <typename Real>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
};

// One Adam update from the gradients currently in `params`, divided by
// grad_scale (accumulated micro-batches). Throws NonFiniteError naming the
// parameter if any gradient is not finite; no parameter is touched then.
template <typename Real>
void adam_step(ParameterSet<Real>& params, AdamState<Real>& state, const TrainHyper& h, double lr,
               double grad_scale = 1.0);

}  // namespace lenctl::nnet
