#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "meshrt/data.hpp"
#include "meshrt/model.hpp"

namespace meshrt {

struct TrainConfig {
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_frac = 0.01;
  double final_lr_frac = 0.10;
  double clip_norm = 1.0;  // <= 0 disables clipping
  int steps = 200;
  int batch = 8;
  int seq_len = 64;
  std::uint64_t seed = 0;
  int eval_every = 0;        // needle evaluation cadence; 0 = only at the end
  int checkpoint_every = 0;  // 0 = every 10% of steps
  bool single_epoch = false;
};

/// Throws ConfigError on out-of-range values.
void validate(const TrainConfig& cfg);

/// Linear warmup over ceil(warmup_frac·steps) steps from 0 to peak, then
/// cosine to final_lr_frac·peak at step steps − 1.
double lr_at(int step, const TrainConfig& cfg);

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t t = 0;
};

template <class T>
AdamState<T> adam_init(const ParamStore<T>& params);

/// Decoupled weight decay (skipped where the parameter's decay flag is off),
/// then the bias-corrected Adam update. NumericalError on a non-finite
/// gradient, leaving parameters and moments untouched.
template <class T>
void adamw_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr,
                const TrainConfig& cfg);

/// Global L2 norm over all gradients (double accumulation, fixed order).
template <class T>
double global_norm(const std::vector<Tensor<T>>& grads);

struct StepStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
};

/// Forward + backward on one batch, clipping, and one AdamW step at `lr`.
template <class T>
StepStats train_step(Model<T>& model, AdamState<T>& state, const Batch& batch, double lr, const TrainConfig& cfg);

/// Mean cross-entropy of a batch without updating anything.
template <class T>
double eval_loss(const Model<T>& model, const Batch& batch);

/// Fraction of sequences whose final-position argmax equals the target.
template <class T>
double query_accuracy(const Model<T>& model, const Batch& batch);

struct TrainResult {
  std::vector<double> losses;
  std::vector<std::pair<int, double>> needle_accuracy;
  std::filesystem::path final_checkpoint;
};

using LogFn = std::function<void(const std::string&)>;

/// Writes loss.csv (step, loss, lr, grad_norm), needle_eval.csv for needle
/// data, periodic checkpoints ckpt_<step>.bin and final.bin under `out`.
template <class T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, DataSource& data, const std::filesystem::path& out,
                  const std::string& run_json = "{}", const LogFn& log = {});

}  // namespace meshrt
