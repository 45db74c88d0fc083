#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "meshrt/diagnostics.hpp"
#include "meshrt/errors.hpp"
#include "meshrt/rng.hpp"
#include "meshrt/runs.hpp"

using namespace meshrt;
namespace fs = std::filesystem;

namespace {

Tensor<double> rnd(Shape s, std::uint64_t seed) {
  Rng rng(seed, 11);
  return randn<double>(rng, std::move(s));
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("meshrt_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

StageList sample_stages(std::uint64_t seed) {
  const auto he = rnd({6, 4}, seed), h0 = rnd({6, 4}, seed + 100), h1 = rnd({6, 4}, seed + 200);
  return {{"h_emb", he},
          {"h0", h0},
          {"h1", h1},
          {"h_out", rnd({6, 4}, seed + 300)},
          {"f_pre.input", he},
          {"f_pre.output", h0},
          {"f_core0.input", h0},
          {"f_core0.output", h1}};
}

}  // namespace

TEST(Effort, KnownValues) {
  const auto x = rnd({5, 3}, 1);
  EXPECT_DOUBLE_EQ(effort(x, x), 0.0);
  EXPECT_NEAR(effort(x, scale(x, -1.0)), 2.0, 1e-15);
  EXPECT_NEAR(effort(x, Tensor<double>({5, 3})), 2.0, 1e-15);
  EXPECT_NEAR(effort(x, scale(x, 3.0)), 2.0 * 2.0 / 4.0, 1e-15);
  EXPECT_THROW(effort(Tensor<double>({2, 2}), Tensor<double>({2, 2})), DataError);
}

TEST(Effort, SymmetricScaleInvariantAndBounded) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = rnd({4, 6}, s), b = rnd({4, 6}, s + 1000);
    const double e = effort(a, b);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 2.0);
    EXPECT_NEAR(e, effort(b, a), 1e-15);
    EXPECT_NEAR(e, effort(scale(a, 7.5), scale(b, 7.5)), 1e-13);
  }
}

TEST(Cka, SelfSimilarityAndInvariances) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = randn<double>(rng, {12, 5});
    const auto y = randn<double>(rng, {12, 7});
    EXPECT_NEAR(cka_rbf(x, x), 1.0, 1e-12);
    const double c = cka_rbf(x, y);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0 + 1e-12);
    EXPECT_NEAR(c, cka_rbf(y, x), 1e-12);
    // Distances and the median bandwidth are unchanged by rotation, shift and scale.
    auto moved = scale(matmul(x, random_orthogonal(rng, 5)), 4.0);
    for (std::size_t r = 0; r < moved.rows(); ++r) moved(r, 0) += 3.0;
    EXPECT_NEAR(cka_rbf(moved, y), c, 1e-10);
  }
}

TEST(Cka, RejectsMismatchedRows) {
  EXPECT_THROW(cka_rbf(rnd({5, 3}, 1), rnd({6, 3}, 2)), ShapeError);
}

TEST(Spectrum, NormalisedAndNonIncreasing) {
  const auto x = rnd({40, 10}, 4);
  const auto s = spectrum(x, 50);
  ASSERT_EQ(s.size(), 10u);
  EXPECT_DOUBLE_EQ(s[0], 1.0);
  for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LE(s[i], s[i - 1] + 1e-12);
  EXPECT_EQ(spectrum(x, 3).size(), 3u);
  Tensor<double> r1({8, 5});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 5; ++j) r1(i, j) = double(i) - 2.5;
  const auto s1 = spectrum(r1, 5);
  for (std::size_t i = 1; i < s1.size(); ++i) EXPECT_LT(s1[i], 1e-7);
}

TEST(MeanStd, Population) {
  const MeanStd m = mean_std({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(1.25));
  EXPECT_DOUBLE_EQ(mean_std({7}).std, 0.0);
}

TEST(Dump, WriteLoadRoundTrip) {
  const fs::path dir = scratch("dump");
  for (int i = 0; i < 3; ++i) write_sample(dir, i, sample_stages(10 * i + 1), "abc123");
  const DumpSet d = load_dump(dir);
  ASSERT_EQ(d.samples.size(), 3u);
  EXPECT_EQ(d.config_hash, "abc123");
  const StageList ref = sample_stages(11);
  const auto& got = d.samples[1].stages;
  ASSERT_EQ(got.size(), ref.size());
  EXPECT_EQ(got[0].first, "h_emb");
  EXPECT_EQ(got[1].first, "h0");
  EXPECT_EQ(got[3].first, "h_out");
  for (const auto& [name, t] : ref) {
    const auto it = std::find_if(got.begin(), got.end(), [&](const auto& p) { return p.first == name; });
    ASSERT_NE(it, got.end()) << name;
    EXPECT_EQ(it->second, t.cast<float>().cast<double>()) << name;
  }
  fs::remove_all(dir);
}

TEST(Dump, InconsistentSamplesAreRejected) {
  const fs::path dir = scratch("dump_bad");
  write_sample(dir, 0, sample_stages(1), "h");
  StageList fewer = sample_stages(2);
  fewer.pop_back();
  write_sample(dir, 1, fewer, "h");
  EXPECT_THROW(load_dump(dir), DataError);
  fs::remove_all(dir);
  EXPECT_THROW(load_dump(dir), IoError);
}

TEST(Aggregate, MatchesFlatRecomputation) {
  DumpSet d;
  for (int i = 0; i < 5; ++i) d.samples.push_back({i, sample_stages(7 * i + 3)});
  const auto eff = aggregate_effort(d);
  ASSERT_EQ(eff.size(), 2u);
  EXPECT_EQ(eff[0].block, "f_pre");
  for (const auto& row : eff) {
    std::vector<double> xs;
    for (const auto& s : d.samples) {
      const Tensor<double>* in = nullptr;
      const Tensor<double>* out = nullptr;
      for (const auto& [n, t] : s.stages) {
        if (n == row.block + ".input") in = &t;
        if (n == row.block + ".output") out = &t;
      }
      xs.push_back(effort(*in, *out));
    }
    double mu = 0, var = 0;
    for (double x : xs) mu += x;
    mu /= xs.size();
    for (double x : xs) var += (x - mu) * (x - mu);
    EXPECT_NEAR(row.mean, mu, 1e-12);
    EXPECT_NEAR(row.std, std::sqrt(var / xs.size()), 1e-12);
  }
  const auto cka = aggregate_cka(d);
  ASSERT_EQ(cka.size(), 16u);
  for (const auto& r : cka) {
    if (r.stage_a == r.stage_b) EXPECT_DOUBLE_EQ(r.mean, 1.0);
    if (r.stage_a == "h0" && r.stage_b == "h1") {
      double s = 0;
      for (const auto& smp : d.samples) s += cka_rbf(smp.stages[1].second, smp.stages[2].second);
      EXPECT_NEAR(r.mean, s / 5, 1e-12);
    }
  }
  const auto sp = aggregate_spectrum(d, 2);
  ASSERT_EQ(sp.size(), 8u);
  EXPECT_DOUBLE_EQ(sp[0].mean, 1.0);
  EXPECT_DOUBLE_EQ(sp[0].std, 0.0);
}

TEST(Aggregate, CsvRoundTrip) {
  const fs::path dir = scratch("csv");
  const std::vector<EffortRow> e{{"f_pre", 0.1234567890123456789, 1e-17}, {"f_core0", 1.0 / 3.0, 0.0}};
  const std::vector<CkaRow> c{{"h0", "h1", 0.987654321}};
  const std::vector<SpectrumRow> s{{"h0", 0, 1.0, 0.0}, {"h0", 1, 0.5, 0.25}};
  write_effort(dir, e);
  write_cka(dir, c);
  write_spectrum(dir, s);
  EXPECT_EQ(read_effort_csv(dir / "effort.csv"), e);
  EXPECT_EQ(read_cka_csv(dir / "cka.csv"), c);
  EXPECT_EQ(read_spectrum_csv(dir / "spectrum.csv"), s);
  EXPECT_TRUE(fs::exists(dir / "effort.json"));
  fs::remove_all(dir);
}

TEST(Report, IdentityBlocksHaveZeroEffort) {
  const fs::path dir = scratch("report");
  for (int i = 0; i < 4; ++i) {
    const auto h = rnd({6, 4}, i + 1);
    write_sample(dir, i, {{"h_emb", h}, {"h0", h}, {"h_out", h}, {"f_pre.input", h}, {"f_pre.output", h}}, "x");
  }
  std::vector<std::string> lines;
  run_report(dir, "all", dir, 1.0, 50, [&](const std::string& l) { lines.push_back(l); });
  const auto eff = read_effort_csv(dir / "effort.csv");
  ASSERT_EQ(eff.size(), 1u);
  EXPECT_EQ(eff[0].mean, 0.0);
  for (const auto& r : read_cka_csv(dir / "cka.csv")) EXPECT_NEAR(r.mean, 1.0, 1e-12);
  EXPECT_FALSE(lines.empty());
  EXPECT_THROW(run_report(dir, "entropy", dir, 1.0, 50), ConfigError);
  fs::remove_all(dir);
}
