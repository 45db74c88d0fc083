#include "meshrt/grad_check.hpp"

#include <cmath>

namespace meshrt {

namespace {

double evaluate(const ScalarProgram& fn, const std::vector<Tensor<double>>& params) {
  Tape<double> tape(false);
  std::vector<Var<double>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.variable(p));
  const Var<double> out = fn(tape, vars);
  if (out.value().numel() != 1) throw ShapeError("grad_check: program must return a scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite program value");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarProgram& fn, const std::vector<Tensor<double>>& params, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape(true);
    std::vector<Var<double>> vars;
    for (const auto& p : params) vars.push_back(tape.variable(p));
    const Var<double> out = fn(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult res;
  std::vector<Tensor<double>> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].numel(); ++i) {
      const double orig = params[p][i];
      probe[p][i] = orig + eps;
      const double up = evaluate(fn, probe);
      probe[p][i] = orig - eps;
      const double down = evaluate(fn, probe);
      probe[p][i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p][i];
      if (!std::isfinite(a)) throw NumericalError("grad_check: non-finite analytic gradient");
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      ++res.checked;
      if (err > res.max_rel_error || res.checked == 1) {
        res.max_rel_error = err;
        res.worst_param = p;
        res.worst_index = i;
        res.analytic = a;
        res.numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace meshrt
