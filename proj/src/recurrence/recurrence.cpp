#include "meshrt/recurrence.hpp"

namespace meshrt {

template <class T>
Var<T> loop_step(SchemeKind kind, Var<T> h_t, Var<T> h_0, Var<T> h_emb, const CoreFn<T>& core, int step,
                 Var<T>* core_out) {
  const Var<T> out = core(h_t, step);
  if (core_out) *core_out = out;
  switch (kind) {
    case SchemeKind::Base: return out;
    case SchemeKind::Residual: return add(out, h_t);
    case SchemeKind::Anchor: return add(out, h_0);
    case SchemeKind::AnchorStar: return add(out, h_emb);
    default: throw ConfigError("loop_step: scheme " + to_string(kind) + " has no fixed supplement");
  }
}

template <class T>
Var<T> comb_step(const SchemeSpec& spec, const CombParams<T>& comb, Var<T> h_t, Var<T> h_0, Var<T> h_emb,
                 const CoreFn<T>& core, int step, std::size_t seq_len, Var<T>* core_out) {
  const Var<T> out = core(h_t, step);
  if (core_out) *core_out = out;
  const Var<T> second = spec.comb_second == CombSource::Previous ? h_t : h_0;
  if (spec.kind == SchemeKind::StaticComb) {
    if (!comb.alpha.valid()) throw StateError("static combination without coefficients");
    return add(add(scalar_scale(out, comb.alpha, 0), scalar_scale(second, comb.alpha, 1)),
               scalar_scale(h_emb, comb.alpha, 2));
  }
  if (spec.kind == SchemeKind::DynamicComb) {
    if (!comb.head_w.valid() || !comb.head_b.valid()) throw StateError("dynamic combination without a head");
    const Var<T> coef = linear(prefix_mean(h_t, seq_len), comb.head_w, comb.head_b);
    return add(add(col_scale(out, coef, 0), col_scale(second, coef, 1)), col_scale(h_emb, coef, 2));
  }
  throw ConfigError("comb_step: scheme " + to_string(spec.kind) + " is not a combination scheme");
}

template <class T>
LoopResult<T> run_loop(const SchemeSpec& spec, const CombParams<T>& comb, Var<T> h_0, Var<T> h_emb,
                       const CoreFn<T>& core, int k, std::size_t seq_len) {
  if (k < 1) throw RangeError("run_loop: K must be >= 1");
  const bool combination = spec.kind == SchemeKind::StaticComb || spec.kind == SchemeKind::DynamicComb;
  LoopResult<T> res;
  Var<T> h = h_0;
  for (int t = 0; t < k; ++t) {
    Var<T> out;
    h = combination ? comb_step(spec, comb, h, h_0, h_emb, core, t, seq_len, &out)
                    : loop_step(spec.kind, h, h_0, h_emb, core, t, &out);
    res.states.push_back(h);
    res.core_outputs.push_back(out);
  }
  res.h_final = h;
  return res;
}

#define MESHRT_REC_INSTANTIATE(T)                                                                               \
  template Var<T> loop_step(SchemeKind, Var<T>, Var<T>, Var<T>, const CoreFn<T>&, int, Var<T>*);               \
  template Var<T> comb_step(const SchemeSpec&, const CombParams<T>&, Var<T>, Var<T>, Var<T>, const CoreFn<T>&, \
                            int, std::size_t, Var<T>*);                                                         \
  template LoopResult<T> run_loop(const SchemeSpec&, const CombParams<T>&, Var<T>, Var<T>, const CoreFn<T>&,   \
                                  int, std::size_t);

MESHRT_REC_INSTANTIATE(float)
MESHRT_REC_INSTANTIATE(double)

}  // namespace meshrt
