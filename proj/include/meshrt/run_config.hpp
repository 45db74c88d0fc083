#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "meshrt/data.hpp"
#include "meshrt/model.hpp"
#include "meshrt/training.hpp"

namespace meshrt {

enum class DataKind { Synthetic, Corpus, Needle };

struct DataConfig {
  DataKind kind = DataKind::Synthetic;
  std::string corpus_path;                   // Corpus
  std::size_t corpus_bytes = 1u << 20;       // Synthetic
  NeedleVocab needle{};
  std::size_t needle_distance = 8;
};

struct ProbeConfig {
  int samples = 32;
  double theta = 1.0;
  int top_k = 50;
};

/// Everything a run needs. Text form is `key = value` lines with `#`
/// comments; `seed` seeds both initialisation and data.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  ProbeConfig probe;
  bool vocab_explicit = false;  // otherwise taken from the data source
};

/// Throws ParseError (byte offset of the bad line) or ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Sets one key; ConfigError for unknown keys or bad values.
void set_run_key(RunConfig& cfg, const std::string& key, const std::string& value);
/// Current value of a key as text; ConfigError for unknown keys.
std::string get_run_key(const RunConfig& cfg, const std::string& key);

/// Canonical text form, every key present.
std::string format_run_config(const RunConfig& cfg);

/// MESH_SEED, when set, replaces the seed.
void apply_env_overrides(RunConfig& cfg);

std::unique_ptr<DataSource> make_data_source(const RunConfig& cfg);

/// Model config with vocab filled from the data source when not explicit.
ModelConfig resolved_model_config(const RunConfig& cfg, const DataSource& data);

}  // namespace meshrt
