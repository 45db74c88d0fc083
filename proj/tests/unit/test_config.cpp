#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "meshrt/errors.hpp"
#include "meshrt/mesh.hpp"
#include "meshrt/plan.hpp"
#include "meshrt/rng.hpp"
#include "meshrt/run_config.hpp"
#include "meshrt/scheme.hpp"

using namespace meshrt;

TEST(Plan, ParsesTableExamples) {
  const LayerPlan a = parse_plan("4+8R2+4");
  EXPECT_EQ(a, (LayerPlan{4, 8, 2, 4, true}));
  EXPECT_EQ(a.n_compute(), 24);
  EXPECT_EQ(a.unique_layers(), 16);
  EXPECT_EQ(parse_plan("3+6R3+3").n_compute(), 24);
  EXPECT_EQ(parse_plan("2+4R2+2").n_compute(), 12);
}

TEST(Plan, BareIntegerIsVanilla) {
  const LayerPlan p = parse_plan("12");
  EXPECT_FALSE(p.recursive);
  EXPECT_EQ(p.l_core, 12);
  EXPECT_EQ(p.n_compute(), 12);
  EXPECT_EQ(format_plan(p), "12");
}

TEST(Plan, ErrorsCarryOffsets) {
  auto offset_of = [](const char* s) -> long {
    try {
      parse_plan(s);
    } catch (const ParseError& e) {
      return static_cast<long>(e.offset());
    }
    return -1;
  };
  EXPECT_EQ(offset_of(""), 0);
  EXPECT_EQ(offset_of("+8R2+4"), 0);
  EXPECT_EQ(offset_of("4+8X2+4"), 3);
  EXPECT_EQ(offset_of("4+8R2+"), 6);
  EXPECT_EQ(offset_of("4+8R2+4 "), 7);
  EXPECT_EQ(offset_of("4+-8R2+4"), 2);
  EXPECT_THROW(parse_plan("4+8R0+4"), RangeError);
  EXPECT_THROW(parse_plan("0"), RangeError);
}

TEST(Plan, RandomRoundTrip) {
  Rng rng(17);
  for (int i = 0; i < 500; ++i) {
    const LayerPlan p{1 + int(rng.below(40)), 1 + int(rng.below(40)), 1 + int(rng.below(9)), 1 + int(rng.below(40)),
                      true};
    const std::string s = format_plan(p);
    EXPECT_EQ(parse_plan(s), p) << s;
    EXPECT_EQ(format_plan(parse_plan(s)), s);
  }
}

TEST(Plan, ParamReduction) {
  EXPECT_NEAR(param_reduction(parse_plan("4+8R2+4")), 100.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(param_reduction(parse_plan("3+6R3+3")), 50.0);
  EXPECT_DOUBLE_EQ(param_reduction(parse_plan("3+5R2+3")), 31.25);
  EXPECT_DOUBLE_EQ(param_reduction(parse_plan("8")), 0.0);
}

TEST(Scheme, NamesRoundTrip) {
  for (SchemeKind k : {SchemeKind::Base, SchemeKind::Residual, SchemeKind::Anchor, SchemeKind::AnchorStar,
                       SchemeKind::StaticComb, SchemeKind::DynamicComb, SchemeKind::Mesh})
    EXPECT_EQ(parse_scheme_kind(to_string(k)), k);
  EXPECT_THROW(parse_scheme_kind("anchorstar"), ConfigError);
}

TEST(Scheme, ResolveAppliesBufferRule) {
  const LayerPlan p = parse_plan("2+2R3+2");
  EXPECT_EQ(resolve_scheme(SchemeSpec{SchemeKind::Mesh}, p).mesh_slots, 6);
  EXPECT_EQ(resolve_scheme(SchemeSpec{SchemeKind::Mesh, 4}, p).mesh_slots, 4);
  EXPECT_THROW(resolve_scheme(SchemeSpec{SchemeKind::Mesh, 3}, p), ConfigError);
  EXPECT_THROW(resolve_scheme(SchemeSpec{SchemeKind::Residual, 5}, p), ConfigError);
  EXPECT_THROW(resolve_scheme(SchemeSpec{SchemeKind::Anchor, 0, false}, p), ConfigError);
}

TEST(RunConfig, ParsesKeysCommentsAndBlankLines) {
  const RunConfig c = parse_run_config(
      "# toy\n"
      "plan = 1+2R3+1   # trailing comment\n"
      "\n"
      "scheme=mesh\n"
      "  d_model = 48\n"
      "lr = 3e-4\n"
      "seed = 9\n");
  EXPECT_EQ(c.model.plan, (LayerPlan{1, 2, 3, 1, true}));
  EXPECT_EQ(c.model.scheme.kind, SchemeKind::Mesh);
  EXPECT_EQ(c.model.d_model, 48);
  EXPECT_DOUBLE_EQ(c.train.peak_lr, 3e-4);
  EXPECT_EQ(c.model.seed, 9u);
  EXPECT_EQ(c.train.seed, 9u);
}

TEST(RunConfig, ParseErrorOffsets) {
  try {
    parse_run_config("steps = 4\nthis line has no equals\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 10u);
  }
  try {
    parse_run_config("steps = 4\nplan =  4+8X2+4\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 10u + 8u + 3u);
  }
  EXPECT_THROW(parse_run_config("colour = blue\n"), ConfigError);
  EXPECT_THROW(parse_run_config("steps = many\n"), ConfigError);
}

TEST(RunConfig, FormatRoundTrip) {
  RunConfig c;
  set_run_key(c, "plan", "3+6R3+3");
  set_run_key(c, "scheme", "dynamic_comb");
  set_run_key(c, "lr", "0.0007");
  set_run_key(c, "data", "needle");
  set_run_key(c, "needle_distance", "12");
  const std::string text = format_run_config(c);
  const RunConfig back = parse_run_config(text);
  EXPECT_EQ(format_run_config(back), text);
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(std::stod(get_run_key(back, "lr")), 0.0007);
  EXPECT_EQ(get_run_key(back, "needle_distance"), "12");
  EXPECT_THROW(get_run_key(back, "nope"), ConfigError);
}

TEST(RunConfig, EnvironmentSeedOverride) {
  RunConfig c;
  set_run_key(c, "seed", "3");
  ::setenv("MESH_SEED", "77", 1);
  apply_env_overrides(c);
  ::unsetenv("MESH_SEED");
  EXPECT_EQ(c.train.seed, 77u);
  EXPECT_EQ(c.model.seed, 77u);
}

TEST(RunConfig, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "meshrt_unit_cfg.txt";
  std::ofstream(path) << "steps = 12\nbatch = 2\n";
  const RunConfig c = load_run_config(path);
  EXPECT_EQ(c.train.steps, 12);
  EXPECT_EQ(c.train.batch, 2);
  std::filesystem::remove(path);
  EXPECT_THROW(load_run_config(path), IoError);
}

TEST(RunConfig, VocabComesFromData) {
  RunConfig c;
  set_run_key(c, "data", "needle");
  set_run_key(c, "seq_len", "80");
  const auto data = make_data_source(c);
  const ModelConfig m = resolved_model_config(c, *data);
  EXPECT_EQ(m.vocab, NeedleVocab{}.size());
  EXPECT_EQ(m.max_seq, 80);
}
