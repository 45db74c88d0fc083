#include "meshrt/selftest.hpp"

#include <cmath>
#include <cstdio>

#include "meshrt/rng.hpp"

namespace meshrt {

namespace {

std::vector<std::int32_t> random_tokens(Rng& rng, std::size_t n, int vocab) {
  std::vector<std::int32_t> t(n);
  for (auto& x : t) x = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
  return t;
}

double rel_diff(const Tensor<double>& a, const Tensor<double>& ref) {
  return frobenius(sub(a, ref)) / frobenius(ref);
}

Tensor<double> random_weights(Rng& rng, std::size_t rows, std::size_t slots, double spread) {
  return softmax_rows(randn<double>(rng, {rows, slots}, spread));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

double pin_simulation_error(SchemeKind target, int n_loop, int d_model, int seq_len, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d_model = d_model;
  cfg.n_heads = 2;
  cfg.d_ff = 2 * d_model;
  cfg.vocab = 32;
  cfg.max_seq = seq_len;
  cfg.plan = LayerPlan{1, 1, n_loop, 1, true};
  cfg.scheme = SchemeSpec{target};
  cfg.dtype = Dtype::F64;
  cfg.seed = seed;
  const Model<double> ref = init_model<double>(cfg);

  const int slots = default_buffer_len(n_loop);
  const RouterSet<double> pinned =
      pin_simulation<double>(target, PinGeometry{n_loop, slots, static_cast<std::size_t>(d_model)});
  Model<double> mesh = rescheme(ref, SchemeSpec{SchemeKind::Mesh, slots});
  set_routers(mesh, pinned);

  Rng rng(seed, 17);
  const auto tokens = random_tokens(rng, 2 * static_cast<std::size_t>(seq_len), cfg.vocab);
  StateTrace<double> tr_ref, tr_mesh;
  forward_logits(ref, tokens, static_cast<std::size_t>(seq_len), &tr_ref);
  forward_logits(mesh, tokens, static_cast<std::size_t>(seq_len), &tr_mesh);
  const std::string last = "h" + std::to_string(n_loop);
  return rel_diff(tr_mesh.stage(last), tr_ref.stage(last));
}

double unroll_step_max_error(int trials, std::uint64_t seed) {
  Rng rng(seed, 23);
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    const std::size_t B = 2 + rng.below(5), L = 1 + rng.below(8), D = 1 + rng.below(8);
    MeshBuffer<double> buf;
    for (std::size_t b = 0; b < B; ++b) buf.slots.push_back(randn<double>(rng, {L, D}));
    const Tensor<double> h_m = randn<double>(rng, {L, D});
    const Tensor<double> ww = random_weights(rng, L, B, 3.0), wr = random_weights(rng, L, B, 3.0);
    const UnrollStep u = unroll_step(buf, h_m, ww, wr);
    const Tensor<double> direct = mesh_read(mesh_write(buf, h_m, ww), wr);
    worst = std::max(worst, max_abs_diff(u.reconstruction, direct));
  }
  return worst;
}

double full_unroll_max_rel_error(int trials, std::uint64_t seed) {
  Rng rng(seed, 29);
  double worst = 0.0;
  for (int i = 0; i < trials; ++i) {
    const int K = 1 + static_cast<int>(rng.below(4));
    const int B = 2 + static_cast<int>(rng.below(5));
    const std::size_t L = 2 + rng.below(6), D = 2 + rng.below(6);
    Tape<double> tape(false);
    const Var<double> h_emb = tape.constant(randn<double>(rng, {L, D}));
    const Var<double> wp = tape.constant(randn<double>(rng, {D, D}, 0.7));
    const Var<double> bp = tape.constant(randn<double>(rng, {D}, 0.3));
    const Var<double> wc = tape.constant(randn<double>(rng, {D, D}, 0.7));
    const Var<double> bc = tape.constant(randn<double>(rng, {D}, 0.3));
    const std::function<Var<double>(Var<double>)> f_pre = [&](Var<double> h) { return gelu(linear(h, wp, bp)); };
    const CoreFn<double> f_core = [&](Var<double> h, int) { return add(h, gelu(linear(h, wc, bc))); };
    RouterSet<double> rs;
    for (int t = -1; t < K; ++t) {
      rs.write.push_back({randn<double>(rng, {D, static_cast<std::size_t>(B)}), randn<double>(rng, {static_cast<std::size_t>(B)})});
      rs.read.push_back({randn<double>(rng, {D, static_cast<std::size_t>(B)}), randn<double>(rng, {static_cast<std::size_t>(B)})});
    }
    MeshRecord<double> rec;
    mesh_run(h_emb, f_pre, f_core, K, bind_routers(tape, rs, false), B, &rec);
    const ExpansionCoeffs c = full_unroll(rec);
    for (int t = -1; t < K; ++t) {
      const Tensor<double>& h_next = rec.steps[static_cast<std::size_t>(t + 1)].h_next;
      worst = std::max(worst, rel_diff(reconstruct(c, rec, t), h_next));
    }
  }
  return worst;
}

GradCheckResult model_grad_check(const ModelGradSpec& s, double eps) {
  ModelConfig cfg;
  cfg.d_model = s.d_model;
  cfg.n_heads = s.n_heads;
  cfg.d_ff = 2 * s.d_model;
  cfg.vocab = s.vocab;
  cfg.max_seq = s.seq_len;
  cfg.plan = s.plan;
  cfg.scheme = s.scheme;
  cfg.dtype = Dtype::F64;
  cfg.seed = s.seed;
  Model<double> model = init_model<double>(cfg);
  Rng rng(s.seed, 31);
  for (auto& p : model.params) add_inplace(p.value, randn<double>(rng, p.value.shape(), 0.1));

  const auto tokens = random_tokens(rng, static_cast<std::size_t>(s.seq_len), s.vocab);
  const auto targets = random_tokens(rng, static_cast<std::size_t>(s.seq_len), s.vocab);
  std::vector<Tensor<double>> params;
  for (const auto& p : model.params) params.push_back(p.value);

  const ScalarProgram fn = [&](Tape<double>&, std::span<const Var<double>> vars) {
    BoundParams<double> P{&model.params, std::vector<Var<double>>(vars.begin(), vars.end())};
    const ForwardResult<double> f = forward(model, P, tokens, static_cast<std::size_t>(s.seq_len), false);
    return cross_entropy(f.logits, std::span<const std::int32_t>(targets));
  };
  return grad_check(fn, params, eps);
}

int run_selftest(const std::function<void(const CheckResult&)>& report) {
  int failures = 0;
  auto emit = [&](const std::string& name, bool ok, const std::string& detail) {
    if (!ok) ++failures;
    if (report) report({name, ok, detail});
  };
  auto guarded = [&](const std::string& name, const std::function<std::pair<bool, std::string>()>& fn) {
    try {
      const auto [ok, detail] = fn();
      emit(name, ok, detail);
    } catch (const std::exception& e) {
      emit(name, false, std::string("threw: ") + e.what());
    }
  };

  guarded("router_param_count", [] {
    const std::int64_t n = router_param_count(LayerPlan{4, 8, 2, 4, true}, 2048, 5, true);
    return std::pair{n == 61470, "4+8R2+4, d 2048, B 5: " + std::to_string(n)};
  });
  guarded("pin_residual", [] {
    const double e = pin_simulation_error(SchemeKind::Residual, 2, 32, 16, 1);
    return std::pair{e <= 1e-4, fmt("K=2 rel error %.3e (tol 1e-4)", e)};
  });
  guarded("pin_base", [] {
    const double e = pin_simulation_error(SchemeKind::Base, 2, 32, 16, 2);
    return std::pair{e <= 1e-10, fmt("K=2 rel error %.3e (tol 1e-10)", e)};
  });
  guarded("pin_anchor_k1", [] {
    const double e = pin_simulation_error(SchemeKind::Anchor, 1, 32, 16, 3);
    return std::pair{e <= 1e-10, fmt("K=1 rel error %.3e (tol 1e-10)", e)};
  });
  guarded("unroll_step_identity", [] {
    const double e = unroll_step_max_error(200, 4);
    return std::pair{e <= 1e-14, fmt("max abs error %.3e (tol 1e-14)", e)};
  });
  guarded("full_unroll_identity", [] {
    const double e = full_unroll_max_rel_error(50, 5);
    return std::pair{e <= 1e-10, fmt("max rel error %.3e (tol 1e-10)", e)};
  });
  for (SchemeKind k : {SchemeKind::Base, SchemeKind::Mesh}) {
    guarded("grad_check_" + to_string(k), [k] {
      ModelGradSpec spec;
      spec.scheme.kind = k;
      spec.plan = LayerPlan{1, 1, 2, 1, true};
      spec.d_model = 8;
      spec.seq_len = 4;
      const GradCheckResult r = model_grad_check(spec);
      return std::pair{r.max_rel_error <= 1e-4, fmt("max rel error %.3e (tol 1e-4)", r.max_rel_error) + " over " +
                                                    std::to_string(r.checked) + " entries"};
    });
  }
  return failures;
}

}  // namespace meshrt
