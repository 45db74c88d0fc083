#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "meshrt/errors.hpp"
#include "meshrt/training.hpp"

using namespace meshrt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny(SchemeKind kind, int vocab) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab = vocab;
  c.max_seq = 16;
  c.plan = LayerPlan{1, 1, 2, 1, true};
  c.scheme.kind = kind;
  c.dtype = Dtype::F64;
  c.seed = 5;
  return c;
}

ParamStore<double> two_params() {
  ParamStore<double> p;
  p.add("w", Tensor<double>::vector({1.0, -2.0}), true);
  p.add("b", Tensor<double>::vector({0.5}), false);
  return p;
}

}  // namespace

TEST(Schedule, WarmupThenCosine) {
  TrainConfig c;
  c.steps = 1000;
  c.peak_lr = 1e-3;
  EXPECT_EQ(lr_at(0, c), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(5, c), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(10, c), 1e-3);
  EXPECT_NEAR(lr_at(999, c), 1e-4, 1e-18);
  EXPECT_NEAR(lr_at(10 + (989 / 2), c), 5.5e-4, 2e-6);
  double prev = lr_at(10, c);
  for (int s = 11; s < 1000; ++s) {
    const double lr = lr_at(s, c);
    EXPECT_LE(lr, prev);
    EXPECT_LT(prev - lr, 5e-6);
    prev = lr;
  }
  EXPECT_THROW(lr_at(1000, c), RangeError);
  EXPECT_THROW(lr_at(-1, c), RangeError);
}

TEST(AdamW, FirstStepClosedForm) {
  TrainConfig c;
  c.weight_decay = 0.1;
  auto p = two_params();
  auto st = adam_init(p);
  const std::vector<Tensor<double>> g{Tensor<double>::vector({0.3, -4.0}), Tensor<double>::vector({2.0})};
  adamw_step(p, g, st, 0.01, c);
  // After one step m̂ = g and v̂ = g², so the update is lr·g/(|g| + eps).
  auto expect = [&](double w, double gv, bool decay) {
    const double x = w - (decay ? 0.01 * 0.1 * w : 0.0);
    return x - 0.01 * gv / (std::abs(gv) + 1e-8);
  };
  EXPECT_NEAR(p.at("w")[0], expect(1.0, 0.3, true), 1e-15);
  EXPECT_NEAR(p.at("w")[1], expect(-2.0, -4.0, true), 1e-15);
  EXPECT_NEAR(p.at("b")[0], expect(0.5, 2.0, false), 1e-15);
  EXPECT_EQ(st.t, 1);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  TrainConfig c;
  auto p = two_params();
  auto st = adam_init(p);
  const std::vector<Tensor<double>> g{Tensor<double>({2}), Tensor<double>({1})};
  adamw_step(p, g, st, 0.5, c);
  EXPECT_DOUBLE_EQ(p.at("w")[0], 1.0 - 0.5 * 0.01);
  EXPECT_DOUBLE_EQ(p.at("b")[0], 0.5);
  c.weight_decay = 0.0;
  const auto before = p.at("w");
  adamw_step(p, g, st, 0.5, c);
  EXPECT_EQ(p.at("w"), before);
}

TEST(AdamW, NonFiniteGradientAbortsUntouched) {
  TrainConfig c;
  auto p = two_params();
  auto st = adam_init(p);
  const std::vector<Tensor<double>> g{Tensor<double>::vector({1.0, NAN}), Tensor<double>({1})};
  EXPECT_THROW(adamw_step(p, g, st, 0.1, c), NumericalError);
  EXPECT_EQ(p.at("w"), Tensor<double>::vector({1.0, -2.0}));
  EXPECT_EQ(st.t, 0);
  EXPECT_EQ(st.m[0], Tensor<double>({2}));
}

TEST(AdamW, GlobalNorm) {
  const std::vector<Tensor<double>> g{Tensor<double>::vector({3.0}), Tensor<double>::vector({0.0, 4.0})};
  EXPECT_DOUBLE_EQ(global_norm(g), 5.0);
}

TEST(Data, NeedleLayout) {
  Rng rng(2);
  const NeedleVocab v;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = 32, d = 1 + rng.below(28);
    const Batch b = needle_task(rng, L, v, d);
    ASSERT_EQ(b.tokens.size(), L);
    const std::size_t q = L - 1, p = q - d;
    EXPECT_EQ(b.tokens[q], v.query());
    EXPECT_EQ(b.tokens[p - 1], v.mark());
    EXPECT_GE(b.tokens[p], v.filler);
    EXPECT_LT(b.tokens[p], v.filler + v.payload);
    EXPECT_EQ(b.targets[q], b.tokens[p]);
    for (std::size_t i = 0; i + 1 < L; ++i) EXPECT_EQ(b.targets[i], b.tokens[i + 1]);
  }
  EXPECT_THROW(needle_task(rng, 32, v, 30), RangeError);
  EXPECT_THROW(needle_task(rng, 32, v, 0), RangeError);
}

TEST(Data, CorpusTargetsAreShiftedTokens) {
  CorpusSource src(synthetic_corpus(5000, 1));
  EXPECT_LT(src.vocab(), 64);
  const Batch b = src.next(3, 20);
  ASSERT_EQ(b.tokens.size(), 60u);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i + 1 < 20; ++i) EXPECT_EQ(b.targets[s * 20 + i], b.tokens[s * 20 + i + 1]);
  EXPECT_EQ(synthetic_corpus(5000, 1), synthetic_corpus(5000, 1));
  EXPECT_NE(synthetic_corpus(5000, 1), synthetic_corpus(5000, 2));

  CorpusSource once(std::string(50, 'a') + "b", true);
  once.next(2, 20);
  EXPECT_THROW(once.next(2, 20), DataError);
}

TEST(Training, InitialLossIsNearLogVocab) {
  for (SchemeKind k : {SchemeKind::Base, SchemeKind::Mesh, SchemeKind::DynamicComb}) {
    const auto m = init_model<double>(tiny(k, 40));
    NeedleSource data(NeedleVocab{30, 8}, 5, 1);
    const double loss = eval_loss(m, data.next(4, 16));
    EXPECT_NEAR(loss, std::log(40.0), 0.05 * std::log(40.0)) << to_string(k);
  }
}

TEST(Training, StepFollowsTheGradient) {
  // A small step must lower the loss on the batch it was computed from.
  auto m = init_model<double>(tiny(SchemeKind::Mesh, 26));
  NeedleSource data(NeedleVocab{}, 4, 3);
  const Batch b = data.next(4, 16);
  TrainConfig c;
  c.weight_decay = 0.0;
  auto st = adam_init(m.params);
  const double before = eval_loss(m, b);
  const StepStats s = train_step(m, st, b, 1e-4, c);
  EXPECT_DOUBLE_EQ(s.loss, before);
  EXPECT_GT(s.grad_norm, 0.0);
  EXPECT_LT(eval_loss(m, b), before);
}

TEST(Training, LossDecreasesAndRunIsReproducible) {
  const fs::path dir = fs::temp_directory_path() / "meshrt_unit_train";
  fs::remove_all(dir);
  TrainConfig c;
  c.steps = 40;
  c.batch = 4;
  c.seq_len = 16;
  c.peak_lr = 3e-3;
  c.seed = 9;
  auto run = [&](const fs::path& out) {
    auto m = init_model<double>(tiny(SchemeKind::Mesh, 26));
    NeedleSource data(NeedleVocab{}, 4, c.seed);
    return train(m, c, data, out);
  };
  const TrainResult a = run(dir / "a");
  const TrainResult b = run(dir / "b");
  ASSERT_EQ(a.losses.size(), 40u);
  EXPECT_EQ(a.losses, b.losses);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += a.losses[i];
    tail += a.losses[35 + i];
  }
  EXPECT_LT(tail, 0.95 * head);
  EXPECT_TRUE(fs::exists(dir / "a" / "loss.csv"));
  EXPECT_TRUE(fs::exists(a.final_checkpoint));
  EXPECT_FALSE(a.needle_accuracy.empty());
  fs::remove_all(dir);
}

TEST(Training, ConfigValidation) {
  TrainConfig c;
  c.steps = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = TrainConfig{};
  c.beta2 = 1.0;
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_NO_THROW(validate(TrainConfig{}));
}
