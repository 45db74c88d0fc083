#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "meshrt/model.hpp"

namespace meshrt {

/// 2·‖out − in‖ / (‖out‖ + ‖in‖), in [0, 2]. DataError if both are zero.
template <class T>
double effort(const Tensor<T>& input, const Tensor<T>& output);

/// CKA between RBF Gram matrices of the rows of x and y. Bandwidth per input
/// is theta times its median pairwise row distance; biased HSIC.
template <class T>
double cka_rbf(const Tensor<T>& x, const Tensor<T>& y, double theta = 1.0);

/// σ_i/σ_0 for the top min(L, D, top_k) singular values.
template <class T>
std::vector<double> spectrum(const Tensor<T>& x, std::size_t top_k = 50);

// ---------------------------------------------------------------------------
// State dumps
// ---------------------------------------------------------------------------

using StageList = std::vector<std::pair<std::string, Tensor<double>>>;

/// Splits a captured trace of stacked sequences into per-sequence stage lists.
/// Block pairs appear as "<block>.input" and "<block>.output".
template <class T>
std::vector<StageList> split_trace(const StateTrace<T>& trace, std::size_t seq_len);

/// Sort key for stage names: h_emb, h0..hK, h_out, then block pairs.
std::pair<int, std::string> stage_order_key(const std::string& stage);

/// Writes <dir>/<sample>/<stage>.bin (f32 LE) and <stage>.json sidecars.
void write_sample(const std::filesystem::path& dir, int sample_id, const StageList& stages,
                  const std::string& config_hash);

struct DumpSample {
  int id = 0;
  StageList stages;  // canonical order
};

struct DumpSet {
  std::vector<DumpSample> samples;  // ascending id
  std::string config_hash;
};

/// Reads every sample directory, validating sidecars against file sizes and
/// stage sets against each other. Throws DataError / IoError.
DumpSet load_dump(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(const std::vector<double>& xs);

struct EffortRow {
  std::string block;
  double mean = 0.0, std = 0.0;
};
struct CkaRow {
  std::string stage_a, stage_b;
  double mean = 0.0;
};
struct SpectrumRow {
  std::string stage;
  int index = 0;
  double mean = 0.0, std = 0.0;
};

std::vector<EffortRow> aggregate_effort(const DumpSet& dump);
/// All ordered pairs of the main stages (h_emb, h0..hK, h_out).
std::vector<CkaRow> aggregate_cka(const DumpSet& dump, double theta = 1.0);
std::vector<SpectrumRow> aggregate_spectrum(const DumpSet& dump, std::size_t top_k = 50);

/// Writes <name>.csv and <name>.json; numbers use 17 significant digits.
void write_effort(const std::filesystem::path& dir, const std::vector<EffortRow>& rows);
void write_cka(const std::filesystem::path& dir, const std::vector<CkaRow>& rows);
void write_spectrum(const std::filesystem::path& dir, const std::vector<SpectrumRow>& rows);

std::vector<EffortRow> read_effort_csv(const std::filesystem::path& file);
std::vector<CkaRow> read_cka_csv(const std::filesystem::path& file);
std::vector<SpectrumRow> read_spectrum_csv(const std::filesystem::path& file);

bool operator==(const EffortRow& a, const EffortRow& b);
bool operator==(const CkaRow& a, const CkaRow& b);
bool operator==(const SpectrumRow& a, const SpectrumRow& b);

}  // namespace meshrt
