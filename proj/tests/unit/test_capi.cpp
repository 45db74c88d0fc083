#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "meshrt/meshrt.h"

namespace fs = std::filesystem;

namespace {

void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); }

const char* kTinyRun =
    "plan = 1+1R2+1\n"
    "scheme = mesh\n"
    "d_model = 16\n"
    "n_heads = 2\n"
    "d_ff = 32\n"
    "dtype = f64\n"
    "data = needle\n"
    "needle_distance = 4\n"
    "seq_len = 16\n"
    "batch = 2\n"
    "steps = 8\n"
    "probe_samples = 4\n"
    "seed = 3\n";

}  // namespace

TEST(CApi, StatusNamesAndVersion) {
  EXPECT_STREQ(meshrt_status_name(MESHRT_OK), "ok");
  EXPECT_NE(std::string(meshrt_status_name(MESHRT_ERR_PARSE)), "");
  EXPECT_NE(std::strlen(meshrt_version()), 0u);
}

TEST(CApi, PlanParsingAndOffsets) {
  meshrt_plan_info p{};
  ASSERT_EQ(meshrt_plan_parse("4+8R2+4", &p), MESHRT_OK);
  EXPECT_EQ(p.n_compute, 24);
  EXPECT_EQ(p.n_unique, 16);
  EXPECT_EQ(meshrt_plan_parse("4+8X2+4", &p), MESHRT_ERR_PARSE);
  EXPECT_EQ(meshrt_last_parse_offset(), 3);
  EXPECT_NE(std::string(meshrt_last_error()).find("at byte 3"), std::string::npos);
  EXPECT_EQ(meshrt_plan_parse("4+8R0+4", &p), MESHRT_ERR_RANGE);
  EXPECT_EQ(meshrt_plan_parse(nullptr, &p), MESHRT_ERR_ARGUMENT);
  EXPECT_EQ(meshrt_plan_parse("4", nullptr), MESHRT_ERR_ARGUMENT);
}

TEST(CApi, BufferTooSmallReportsSize) {
  meshrt_plan_info p{};
  ASSERT_EQ(meshrt_plan_parse("3+6R3+3", &p), MESHRT_OK);
  char small[4];
  std::size_t needed = 0;
  EXPECT_EQ(meshrt_plan_format(&p, small, sizeof small, &needed), MESHRT_ERR_BUFFER_TOO_SMALL);
  EXPECT_EQ(needed, 8u);
  char buf[16];
  ASSERT_EQ(meshrt_plan_format(&p, buf, sizeof buf, &needed), MESHRT_OK);
  EXPECT_STREQ(buf, "3+6R3+3");
}

TEST(CApi, Counts) {
  int64_t n = 0;
  ASSERT_EQ(meshrt_router_param_count("4+8R2+4", 2048, 5, 1, &n), MESHRT_OK);
  EXPECT_EQ(n, 61470);
  double pct = 0;
  ASSERT_EQ(meshrt_param_reduction("3+6R3+3", &pct), MESHRT_OK);
  EXPECT_DOUBLE_EQ(pct, 50.0);
  int slots = 0;
  ASSERT_EQ(meshrt_default_buffer_len(2, &slots), MESHRT_OK);
  EXPECT_EQ(slots, 5);
  EXPECT_EQ(meshrt_default_buffer_len(0, &slots), MESHRT_ERR_RANGE);
}

TEST(CApi, ConfigSetGet) {
  meshrt_config* cfg = nullptr;
  ASSERT_EQ(meshrt_config_new(&cfg), MESHRT_OK);
  EXPECT_EQ(meshrt_config_set(cfg, "lr", "0.002"), MESHRT_OK);
  char buf[64];
  std::size_t needed = 0;
  ASSERT_EQ(meshrt_config_get(cfg, "lr", buf, sizeof buf, &needed), MESHRT_OK);
  EXPECT_STREQ(buf, "0.002");
  EXPECT_EQ(meshrt_config_set(cfg, "colour", "red"), MESHRT_ERR_CONFIG);
  EXPECT_EQ(meshrt_config_set(cfg, "plan", "4+8R2+"), MESHRT_ERR_PARSE);
  EXPECT_EQ(meshrt_config_get(cfg, "lr", nullptr, 0, &needed), MESHRT_ERR_BUFFER_TOO_SMALL);
  EXPECT_EQ(needed, 6u);
  meshrt_config_free(cfg);
  meshrt_config_free(nullptr);

  EXPECT_EQ(meshrt_config_parse("steps = 3\nbatch\n", &cfg), MESHRT_ERR_PARSE);
  EXPECT_EQ(meshrt_last_parse_offset(), 10);
  EXPECT_EQ(meshrt_config_load("/nonexistent/run.txt", &cfg), MESHRT_ERR_IO);
}

TEST(CApi, TrainProbeReportAndForward) {
  const fs::path dir = fs::temp_directory_path() / "meshrt_unit_capi";
  fs::remove_all(dir);
  meshrt_config* cfg = nullptr;
  ASSERT_EQ(meshrt_config_parse(kTinyRun, &cfg), MESHRT_OK);
  std::vector<std::string> lines;
  double final_loss = 0;
  ASSERT_EQ(meshrt_train(cfg, (dir / "run").c_str(), collect, &lines, &final_loss), MESHRT_OK)
      << meshrt_last_error();
  EXPECT_TRUE(std::isfinite(final_loss));
  EXPECT_FALSE(lines.empty());
  meshrt_config_free(cfg);

  const std::string ckpt = (dir / "run" / "final.bin").string();
  ASSERT_EQ(meshrt_probe(ckpt.c_str(), (dir / "dump").c_str(), 0, nullptr, nullptr), MESHRT_OK) << meshrt_last_error();
  EXPECT_TRUE(fs::exists(dir / "dump" / "00003"));
  ASSERT_EQ(meshrt_report((dir / "dump").c_str(), "effort", (dir / "rep").c_str(), 1.0, 50, nullptr, nullptr),
            MESHRT_OK);
  EXPECT_TRUE(fs::exists(dir / "rep" / "effort.csv"));
  EXPECT_EQ(meshrt_report((dir / "dump").c_str(), "bogus", (dir / "rep").c_str(), 1.0, 50, nullptr, nullptr),
            MESHRT_ERR_CONFIG);

  meshrt_model* model = nullptr;
  ASSERT_EQ(meshrt_model_load(ckpt.c_str(), &model), MESHRT_OK);
  int vocab = 0;
  ASSERT_EQ(meshrt_model_vocab(model, &vocab), MESHRT_OK);
  EXPECT_EQ(vocab, 26);
  std::vector<int32_t> tokens(2 * 8, 1);
  std::vector<double> logits(2 * 8 * vocab);
  EXPECT_EQ(meshrt_model_forward(model, tokens.data(), 2, 8, logits.data(), logits.size() - 1),
            MESHRT_ERR_BUFFER_TOO_SMALL);
  ASSERT_EQ(meshrt_model_forward(model, tokens.data(), 2, 8, logits.data(), logits.size()), MESHRT_OK);
  for (int v = 0; v < vocab; ++v) EXPECT_EQ(logits[v], logits[8 * vocab + v]);
  tokens[0] = 999;
  EXPECT_EQ(meshrt_model_forward(model, tokens.data(), 2, 8, logits.data(), logits.size()), MESHRT_ERR_DATA);
  meshrt_model_free(model);

  EXPECT_EQ(meshrt_model_load((dir / "missing.bin").c_str(), &model), MESHRT_ERR_IO);
  fs::remove_all(dir);
}
