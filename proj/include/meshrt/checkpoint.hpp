#pragma once

#include <filesystem>
#include <string>

#include "meshrt/model.hpp"

namespace meshrt {

// Layout (little-endian):
//   "MESHCKPT"                       8 bytes
//   manifest length                  u64
//   manifest                         UTF-8 JSON
//     {"format":1, "dtype":..., "config":{...}, "run":{...},
//      "params":[{"name":..., "shape":[...]}, ...]}
//   parameter data                   raw values in manifest order

inline constexpr char kCheckpointMagic[8] = {'M', 'E', 'S', 'H', 'C', 'K', 'P', 'T'};

/// `run_json` must be a JSON object (or empty) and is stored verbatim.
template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const std::string& run_json = "{}");

struct CheckpointInfo {
  ModelConfig config;
  std::string run_json;
  std::size_t param_count = 0;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Loads and converts to T when the stored dtype differs. The parameter list
/// must match the layout init_model would produce for the stored config.
/// Throws IoError or DataError.
template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace meshrt
