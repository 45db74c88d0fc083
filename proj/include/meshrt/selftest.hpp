#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "meshrt/grad_check.hpp"
#include "meshrt/model.hpp"

namespace meshrt {

/// ‖h_mesh(K) − h_target(K)‖_F / ‖h_target(K)‖_F where the mesh model shares
/// every stack weight with a `target` model and uses pinned routers
/// (B = default_buffer_len). Throws ConfigError where no pinning exists.
double pin_simulation_error(SchemeKind target, int n_loop, int d_model, int seq_len, std::uint64_t seed);

/// Max |reconstruction − direct write-then-read| over random cycles.
double unroll_step_max_error(int trials, std::uint64_t seed);

/// Max over random runs (K ≤ 4, B ≤ 6) and steps of
/// ‖reconstruct(full_unroll) − h(t+1)‖ / ‖h(t+1)‖.
double full_unroll_max_rel_error(int trials, std::uint64_t seed);

struct ModelGradSpec {
  SchemeSpec scheme;
  LayerPlan plan{1, 2, 2, 1, true};
  int d_model = 16;
  int n_heads = 2;
  int seq_len = 8;
  int vocab = 11;
  std::uint64_t seed = 7;
};

/// Finite-difference check of the whole model's mean cross-entropy over every
/// parameter, f64. Parameters are perturbed off their neutral init so that
/// combination and routing paths carry signal.
GradCheckResult model_grad_check(const ModelGradSpec& spec, double eps = 1e-5);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick oracle suite. Calls `report` per check; returns the failure count.
int run_selftest(const std::function<void(const CheckResult&)>& report);

}  // namespace meshrt
