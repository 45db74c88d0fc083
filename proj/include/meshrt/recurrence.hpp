#pragma once

#include <functional>
#include <vector>

#include "meshrt/autograd.hpp"
#include "meshrt/scheme.hpp"

namespace meshrt {

/// One application of the core stack at loop step `step` (0-based). With an
/// unshared core the step selects the stack copy.
template <class T>
using CoreFn = std::function<Var<T>(Var<T> h, int step)>;

/// Learnable coefficients of the combination schemes. `alpha` is a rank-1
/// [3] leaf for StaticComb; `head_w` [D×3] and `head_b` [3] form the
/// DynamicComb head. Unused handles stay unbound.
template <class T>
struct CombParams {
  Var<T> alpha;
  Var<T> head_w;
  Var<T> head_b;
};

/// h(t+1) = core(h(t)) + supplement, the supplement chosen by `kind`:
/// Base 0, Residual h(t), Anchor h(0), AnchorStar h_emb.
/// When `core_out` is non-null it receives the raw core output.
template <class T>
Var<T> loop_step(SchemeKind kind, Var<T> h_t, Var<T> h_0, Var<T> h_emb, const CoreFn<T>& core, int step,
                 Var<T>* core_out = nullptr);

/// h(t+1) = a1·core(h(t)) + a2·h(0) + a3·h_emb.
/// Static: a = comb.alpha. Dynamic: a = head(prefix_mean(h(t))) per token, so
/// each position only conditions on itself and earlier positions.
template <class T>
Var<T> comb_step(const SchemeSpec& spec, const CombParams<T>& comb, Var<T> h_t, Var<T> h_0, Var<T> h_emb,
                 const CoreFn<T>& core, int step, std::size_t seq_len, Var<T>* core_out = nullptr);

template <class T>
struct LoopResult {
  Var<T> h_final;
  std::vector<Var<T>> states;        // h(1) .. h(K)
  std::vector<Var<T>> core_outputs;  // core(h(t)) for t = 0 .. K-1
};

/// Runs K steps of the applicable step rule from h(0).
template <class T>
LoopResult<T> run_loop(const SchemeSpec& spec, const CombParams<T>& comb, Var<T> h_0, Var<T> h_emb,
                       const CoreFn<T>& core, int k, std::size_t seq_len);

}  // namespace meshrt
