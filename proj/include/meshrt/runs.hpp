#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "meshrt/run_config.hpp"
#include "meshrt/training.hpp"

namespace meshrt {

struct RunOutcome {
  ModelConfig model;  // as resolved against the data source
  double final_loss = 0.0;  // mean training loss over the last 5% of steps
  std::vector<double> losses;
  std::vector<std::pair<int, double>> needle_accuracy;
  std::filesystem::path checkpoint;
};

/// Trains from scratch under `out`, echoing the effective config to
/// out/config.txt and storing it in every checkpoint.
RunOutcome run_training(const RunConfig& cfg, const std::filesystem::path& out, const LogFn& log = {});

/// Run config stored with a checkpoint by run_training. Throws DataError if
/// the checkpoint carries none.
RunConfig checkpoint_run_config(const std::filesystem::path& checkpoint);

/// Probe inputs: `samples` sequences of the run's seq_len. Corpus windows
/// start at random offsets; needle sequences come from a separate stream.
/// Deterministic in the run seed.
std::vector<std::int32_t> probe_tokens(const RunConfig& cfg, int samples);

/// Forward with capture over probe_tokens; one dump sample per sequence.
/// samples <= 0 uses the stored probe_samples.
void run_probe(const std::filesystem::path& checkpoint, const std::filesystem::path& dump_dir, int samples,
               const LogFn& log = {});

/// metric: effort | cka | spectrum | all. Echoes CSV rows through `log`.
void run_report(const std::filesystem::path& dump_dir, const std::string& metric, const std::filesystem::path& out_dir,
                double theta, int top_k, const LogFn& log = {});

struct AblationRow {
  int k = 0;
  int slots = 0;
  double final_loss = 0.0;
};

/// Same run once per scratchpad count k (B = n_loop + 1 + k) under out/k<k>;
/// tabulated in out/ablate_buffer.csv. Requires the mesh scheme.
std::vector<AblationRow> run_ablate_buffer(const RunConfig& cfg, const std::filesystem::path& out, int k_min, int k_max,
                                           const LogFn& log = {});

}  // namespace meshrt
