#pragma once

#include <string>
#include <string_view>

namespace meshrt {

/// Prelude-recurrent-coda layer topology, written `{pre}+{core}R{loops}+{coda}`.
/// A bare integer N denotes a plain (non-recursive) N-layer stack; it is held
/// as pre = 0, core = N, loops = 1, coda = 0 with `recursive == false`.
struct LayerPlan {
  int l_pre = 0;
  int l_core = 0;
  int n_loop = 1;
  int l_coda = 0;
  bool recursive = true;

  /// Layers in the unrolled computation graph.
  int n_compute() const noexcept { return l_pre + l_core * n_loop + l_coda; }
  /// Layers with distinct weights when the core is shared.
  int unique_layers() const noexcept { return l_pre + l_core + l_coda; }

  bool operator==(const LayerPlan&) const = default;
};

/// Throws ParseError (with byte offset) on malformed text and RangeError on a
/// zero or oversized field.
LayerPlan parse_plan(std::string_view text);

/// Canonical form: no whitespace, no leading zeros.
std::string format_plan(const LayerPlan& plan);

/// Percentage of non-embedding parameters saved relative to an unshared model
/// of equal compute depth, assuming a uniform per-layer cost.
double param_reduction(const LayerPlan& plan);

}  // namespace meshrt
