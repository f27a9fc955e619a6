#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace lenctl::nnet {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is ~0 are judged on absolute error instead.
  double floor = 1e-6;
  // Check only these coordinates; empty = all.
  std::vector<std::size_t> indices;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

using ScalarFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

// Central differences of f against grad at `point`. Throws NonFiniteError if
// f or grad produce a non-finite value.
GradCheckReport gradient_check(const ScalarFn& f, const GradFn& grad, std::vector<double> point,
                               const GradCheckOptions& opts = {});

}  // namespace lenctl::nnet
