#include "lenctl/nnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lenctl/nnet/tensor.hpp"

namespace lenctl::nnet {

GradCheckReport gradient_check(const ScalarFn& f, const GradFn& grad, std::vector<double> point,
                               const GradCheckOptions& opts) {
  const std::vector<double> analytic = grad(point);
  if (analytic.size() != point.size()) {
    throw ShapeError("gradient_check: gradient has " + std::to_string(analytic.size()) +
                     " entries for " + std::to_string(point.size()) + " coordinates");
  }
  for (double g : analytic) {
    if (!std::isfinite(g)) throw NonFiniteError("gradient_check: non-finite analytic gradient");
  }
  std::vector<std::size_t> idx = opts.indices;
  if (idx.empty()) {
    idx.resize(point.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  GradCheckReport rep;
  for (std::size_t i : idx) {
    if (i >= point.size()) throw std::out_of_range("gradient_check: index out of range");
    const double x0 = point[i];
    auto at = [&](double k) {
      point[i] = x0 + k * opts.step;
      const double v = f(point);
      if (!std::isfinite(v)) {
        throw NonFiniteError("gradient_check: non-finite function value at coordinate " + std::to_string(i));
      }
      return v;
    };
    const double numeric = (at(1) - at(-1)) / (2.0 * opts.step);
    point[i] = x0;
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
    if (rel > rep.max_rel_error || rep.checked == 0) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
      rep.worst_analytic = a;
      rep.worst_numeric = numeric;
    }
    ++rep.checked;
  }
  rep.passed = rep.max_rel_error < opts.tolerance;
  return rep;
}

}  // namespace lenctl::nnet
