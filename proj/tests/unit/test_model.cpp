#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "meshrt/checkpoint.hpp"
#include "meshrt/errors.hpp"
#include "meshrt/model.hpp"
#include "meshrt/rng.hpp"

using namespace meshrt;
namespace fs = std::filesystem;

namespace {

ModelConfig small(SchemeKind kind, bool share = true) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab = 13;
  c.max_seq = 8;
  c.plan = LayerPlan{1, 1, 2, 1, true};
  c.scheme.kind = kind;
  c.scheme.share_core = share;
  c.dtype = Dtype::F64;
  c.seed = 3;
  return c;
}

std::vector<std::int32_t> tokens(std::size_t n, int vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::int32_t> t(n);
  for (auto& x : t) x = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
  return t;
}

double stddev(const Tensor<double>& x) {
  double s = 0, s2 = 0;
  for (double v : x.data()) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(x.numel());
  return std::sqrt(s2 / n - (s / n) * (s / n));
}

// Plain-loop pre-LN block: attention with rotary positions, then a GELU MLP.
std::vector<std::vector<double>> oracle_block(const ParamStore<double>& P, const std::string& p,
                                              std::vector<std::vector<double>> h, int heads) {
  const std::size_t L = h.size(), D = h[0].size(), hd = D / heads;
  auto ln = [&](const std::vector<double>& x, const std::string& g, const std::string& b) {
    double mu = 0, var = 0;
    for (double v : x) mu += v;
    mu /= D;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= D;
    std::vector<double> y(D);
    for (std::size_t i = 0; i < D; ++i) y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * P.at(g)[i] + P.at(b)[i];
    return y;
  };
  auto lin = [&](const std::vector<double>& x, const std::string& w, const std::string& b) {
    const Tensor<double>& W = P.at(w);
    std::vector<double> y(W.cols());
    for (std::size_t j = 0; j < W.cols(); ++j) {
      double s = P.at(b)[j];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * W(i, j);
      y[j] = s;
    }
    return y;
  };
  auto rot = [&](std::vector<double> x, std::size_t pos) {
    std::vector<double> y = x;
    for (int hh = 0; hh < heads; ++hh)
      for (std::size_t i = 0; i < hd / 2; ++i) {
        const double ang = double(pos) * std::pow(10000.0, -2.0 * double(i) / double(hd));
        const double a = x[hh * hd + i], b = x[hh * hd + hd / 2 + i];
        y[hh * hd + i] = a * std::cos(ang) - b * std::sin(ang);
        y[hh * hd + hd / 2 + i] = a * std::sin(ang) + b * std::cos(ang);
      }
    return y;
  };
  std::vector<std::vector<double>> q(L), k(L), v(L);
  for (std::size_t t = 0; t < L; ++t) {
    const auto a = ln(h[t], p + "ln1.g", p + "ln1.b");
    q[t] = rot(lin(a, p + "attn.q.w", p + "attn.q.b"), t);
    k[t] = rot(lin(a, p + "attn.k.w", p + "attn.k.b"), t);
    v[t] = lin(a, p + "attn.v.w", p + "attn.v.b");
  }
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> att(D, 0.0);
    for (int hh = 0; hh < heads; ++hh) {
      std::vector<double> sc(t + 1);
      double mx = -1e300;
      for (std::size_t s = 0; s <= t; ++s) {
        double dot = 0;
        for (std::size_t i = 0; i < hd; ++i) dot += q[t][hh * hd + i] * k[s][hh * hd + i];
        sc[s] = dot / std::sqrt(double(hd));
        mx = std::max(mx, sc[s]);
      }
      double z = 0;
      for (auto& e : sc) z += (e = std::exp(e - mx));
      for (std::size_t s = 0; s <= t; ++s)
        for (std::size_t i = 0; i < hd; ++i) att[hh * hd + i] += sc[s] / z * v[s][hh * hd + i];
    }
    const auto o = lin(att, p + "attn.out.w", p + "attn.out.b");
    for (std::size_t i = 0; i < D; ++i) h[t][i] += o[i];
  }
  for (std::size_t t = 0; t < L; ++t) {
    auto up = lin(ln(h[t], p + "ln2.g", p + "ln2.b"), p + "mlp.up.w", p + "mlp.up.b");
    for (auto& x : up) x = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
    const auto dn = lin(up, p + "mlp.down.w", p + "mlp.down.b");
    for (std::size_t i = 0; i < D; ++i) h[t][i] += dn[i];
  }
  return h;
}

}  // namespace

TEST(Model, ValidateRejectsBadShapes) {
  ModelConfig c = small(SchemeKind::Base);
  c.n_heads = 3;
  EXPECT_THROW(validate(c), ConfigError);
  c = small(SchemeKind::Base);
  c.d_model = 18;
  c.n_heads = 6;  // head width 3 is odd
  EXPECT_THROW(validate(c), ConfigError);
  c = small(SchemeKind::Mesh);
  c.plan = parse_plan("6");
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_EQ(validate(small(SchemeKind::Mesh)).scheme.mesh_slots, 5);
}

TEST(Model, InitialisationScales) {
  ModelConfig c = small(SchemeKind::Base);
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 256;
  c.vocab = 200;
  const auto m = init_model<double>(c);
  EXPECT_NEAR(stddev(m.params.at("embed.weight")), 0.02, 0.002);
  EXPECT_NEAR(stddev(m.params.at("core.0.attn.q.w")), 0.02, 0.003);
  const double proj = 0.02 / std::sqrt(2.0 * c.plan.n_compute());
  EXPECT_DOUBLE_EQ(out_proj_std(c.plan), proj);
  EXPECT_NEAR(stddev(m.params.at("core.0.mlp.down.w")), proj, 0.15 * proj);
  EXPECT_EQ(m.params.at("prelude.0.ln1.g"), Tensor<double>::full({64}, 1.0));
  EXPECT_EQ(m.params.at("coda.0.attn.out.b"), Tensor<double>({64}));
}

TEST(Model, SchemeParameters) {
  const auto st = init_model<double>(small(SchemeKind::StaticComb));
  EXPECT_EQ(st.params.at("comb.alpha"), Tensor<double>::vector({1, 0, 0}));
  const auto dy = init_model<double>(small(SchemeKind::DynamicComb));
  EXPECT_EQ(dy.params.at("comb.head.w").shape(), (Shape{16, 3}));
  const auto me = init_model<double>(small(SchemeKind::Mesh));
  EXPECT_TRUE(me.params.contains("mesh.router.-1.write.w"));
  EXPECT_TRUE(me.params.contains("mesh.router.1.read.b"));
  EXPECT_FALSE(me.params.contains("mesh.router.2.read.b"));
  EXPECT_EQ(me.params.numel_with_prefix("mesh.router."),
            static_cast<std::size_t>(router_param_count(me.config.plan, 16, 5, true)));
  const auto un = init_model<double>(small(SchemeKind::Mesh, false));
  EXPECT_TRUE(un.params.contains("core1.0.attn.q.w"));
  EXPECT_FALSE(un.params.contains("core.0.attn.q.w"));
}

TEST(Model, InitIsSeeded) {
  const auto a = init_model<double>(small(SchemeKind::Mesh));
  const auto b = init_model<double>(small(SchemeKind::Mesh));
  ModelConfig c = small(SchemeKind::Mesh);
  c.seed = 4;
  const auto d = init_model<double>(c);
  EXPECT_EQ(a.params.at("core.0.attn.q.w"), b.params.at("core.0.attn.q.w"));
  EXPECT_NE(a.params.at("core.0.attn.q.w"), d.params.at("core.0.attn.q.w"));
}

TEST(Model, BlockMatchesScalarOracle) {
  ModelConfig c = small(SchemeKind::Base);
  auto m = init_model<double>(c);
  Rng rng(8);
  for (auto& p : m.params) add_inplace(p.value, randn<double>(rng, p.value.shape(), 0.2));
  const std::size_t L = 5;
  const auto x = randn<double>(rng, {L, 16});
  Tape<double> tape(false);
  const auto P = bind(m.params, tape, false);
  const auto y = apply_stack(P, "core", 1, tape.constant(x), c.n_heads, L).value();
  std::vector<std::vector<double>> h(L, std::vector<double>(16));
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t i = 0; i < 16; ++i) h[t][i] = x(t, i);
  const auto ref = oracle_block(m.params, "core.0.", h, c.n_heads);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y(t, i), ref[t][i], 1e-12);
}

TEST(Model, ForwardIsCausalForEveryScheme) {
  for (SchemeKind k : {SchemeKind::Base, SchemeKind::Residual, SchemeKind::Anchor, SchemeKind::AnchorStar,
                       SchemeKind::StaticComb, SchemeKind::DynamicComb, SchemeKind::Mesh}) {
    const auto m = init_model<double>(small(k));
    auto t = tokens(8, 13, 1);
    const auto a = forward_logits(m, t, 8);
    t[7] = (t[7] + 1) % 13;
    t[6] = (t[6] + 5) % 13;
    const auto b = forward_logits(m, t, 8);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t v = 0; v < 13; ++v) EXPECT_EQ(a(r, v), b(r, v)) << to_string(k);
  }
}

TEST(Model, SequencesInABatchAreIndependent) {
  const auto m = init_model<double>(small(SchemeKind::Mesh));
  const auto t = tokens(16, 13, 2);
  const auto both = forward_logits(m, t, 8);
  const auto second = forward_logits(m, std::span<const std::int32_t>(t).subspan(8), 8);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t v = 0; v < 13; ++v) EXPECT_EQ(both(8 + r, v), second(r, v));
}

TEST(Model, TraceLayout) {
  const auto m = init_model<double>(small(SchemeKind::Mesh));
  StateTrace<double> tr;
  forward_logits(m, tokens(8, 13, 3), 8, &tr);
  const std::vector<std::string> want{"h_emb", "h0", "h1", "h2", "h_out"};
  EXPECT_EQ(tr.stage_names(), want);
  ASSERT_EQ(tr.blocks().size(), 4u);
  EXPECT_EQ(tr.blocks()[0].block, "f_pre");
  EXPECT_EQ(tr.blocks()[1].block, "f_core0");
  EXPECT_EQ(tr.blocks()[3].block, "f_coda");
  EXPECT_EQ(tr.block_tensor(tr.blocks()[0].input), tr.stage("h_emb"));
}

TEST(Model, FloatTracksDouble) {
  ModelConfig c = small(SchemeKind::Mesh);
  const auto md = init_model<double>(c);
  c.dtype = Dtype::F32;
  const auto mf = init_model<float>(c);
  const auto t = tokens(8, 13, 4);
  const auto a = forward_logits(md, t, 8);
  const auto b = forward_logits(mf, t, 8).cast<double>();
  EXPECT_LT(max_abs_diff(a, b), 1e-4);
}

TEST(Model, ForwardArgumentErrors) {
  const auto m = init_model<double>(small(SchemeKind::Base));
  EXPECT_THROW(forward_logits(m, tokens(7, 13, 1), 8), ShapeError);
  EXPECT_THROW(forward_logits(m, tokens(9, 13, 1), 9), RangeError);
  const auto other = init_model<double>(small(SchemeKind::Base));
  Tape<double> tape(false);
  const auto P = bind(other.params, tape, false);
  EXPECT_THROW(forward(m, P, tokens(8, 13, 1), 8, false), StateError);
}

TEST(Model, ConfigTextAndHash) {
  const ModelConfig c = small(SchemeKind::Mesh);
  ModelConfig back;
  for (const auto& [k, v] : to_kv(c)) {
    bool used = false;
    apply_kv(back, k, v, &used);
    EXPECT_TRUE(used) << k;
  }
  EXPECT_EQ(back, c);
  ModelConfig d = c;
  d.d_ff = 64;
  EXPECT_EQ(config_hash(c), config_hash(back));
  EXPECT_NE(config_hash(c), config_hash(d));
}

TEST(Model, ReschemeKeepsSharedWeights) {
  const auto base = init_model<double>(small(SchemeKind::Base));
  const auto mesh = rescheme(base, SchemeSpec{SchemeKind::Mesh, 5});
  EXPECT_EQ(mesh.params.at("core.0.mlp.up.w"), base.params.at("core.0.mlp.up.w"));
  EXPECT_TRUE(mesh.params.contains("mesh.router.0.write.w"));
  const RouterSet<double> r = get_routers(mesh);
  EXPECT_EQ(r.n_loop(), 2);
}

TEST(Checkpoint, RoundTripAndConversion) {
  const fs::path dir = fs::temp_directory_path() / "meshrt_unit_ckpt";
  fs::create_directories(dir);
  const auto m = init_model<double>(small(SchemeKind::Mesh));
  save_checkpoint(dir / "a.bin", m, R"({"note":"x"})");
  const auto back = load_checkpoint<double>(dir / "a.bin");
  EXPECT_EQ(back.config, m.config);
  for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(back.params[i].value, m.params[i].value);
  const CheckpointInfo info = read_checkpoint_info(dir / "a.bin");
  EXPECT_EQ(info.param_count, m.params.size());
  EXPECT_NE(info.run_json.find("note"), std::string::npos);
  const auto as_float = load_checkpoint<float>(dir / "a.bin");
  EXPECT_EQ(as_float.params.at("embed.weight"), m.params.at("embed.weight").cast<float>());
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const fs::path dir = fs::temp_directory_path() / "meshrt_unit_ckpt2";
  fs::create_directories(dir);
  const auto m = init_model<float>([] {
    auto c = small(SchemeKind::Base);
    c.dtype = Dtype::F32;
    return c;
  }());
  save_checkpoint(dir / "a.bin", m);
  std::string bytes;
  {
    std::ifstream in(dir / "a.bin", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  EXPECT_THROW(load_checkpoint<float>(dir / "short.bin"), DataError);
  std::ofstream(dir / "long.bin", std::ios::binary) << bytes << "xx";
  EXPECT_THROW(load_checkpoint<float>(dir / "long.bin"), DataError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir / "magic.bin", std::ios::binary) << bad;
  EXPECT_THROW(load_checkpoint<float>(dir / "magic.bin"), DataError);
  EXPECT_THROW(load_checkpoint<float>(dir / "missing.bin"), IoError);
  EXPECT_THROW(save_checkpoint(dir / "c.bin", m, "[1,2]"), ConfigError);
  fs::remove_all(dir);
}
