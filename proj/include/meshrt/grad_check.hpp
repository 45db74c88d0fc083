#pragma once

#include <functional>
#include <span>
#include <vector>

#include "meshrt/autograd.hpp"

namespace meshrt {

/// A scalar-valued program over a set of parameter leaves. Must be pure and
/// deterministic: it is re-run for every finite-difference probe.
using ScalarProgram = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients with central differences (±eps) for every
/// element of every parameter. Error per element is
/// |analytic − numeric| / max(1, |numeric|).
GradCheckResult grad_check(const ScalarProgram& fn, const std::vector<Tensor<double>>& params, double eps = 1e-5);

}  // namespace meshrt
