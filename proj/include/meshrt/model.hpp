#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "meshrt/autograd.hpp"
#include "meshrt/mesh.hpp"
#include "meshrt/plan.hpp"
#include "meshrt/scheme.hpp"

namespace meshrt {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab = 256;
  int max_seq = 64;
  LayerPlan plan{1, 2, 3, 1, true};
  SchemeSpec scheme{};
  Dtype dtype = Dtype::F32;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

/// Checks dimensions and resolves the scheme against the plan (default buffer
/// length, slot floor, sharing rules). Throws ConfigError.
ModelConfig validate(ModelConfig cfg);

/// key -> value text form shared by run files and checkpoint manifests.
std::map<std::string, std::string> to_kv(const ModelConfig& cfg);
/// Applies recognised keys; unknown keys are left for the caller.
void apply_kv(ModelConfig& cfg, const std::string& key, const std::string& value, bool* consumed);

/// Stable 64-bit hash of the canonical config text, hex encoded.
std::string config_hash(const ModelConfig& cfg);

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> value;
  bool decay = true;
};

/// Ordered parameter list; the order is the checkpoint order.
template <class T>
class ParamStore {
 public:
  void add(std::string name, Tensor<T> value, bool decay);
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t index(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& at(const std::string& name) { return params_[index(name)].value; }
  const Tensor<T>& at(const std::string& name) const { return params_[index(name)].value; }
  NamedParam<T>& operator[](std::size_t i) { return params_[i]; }
  const NamedParam<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t numel() const;
  /// Sum of numel over parameters whose name starts with `prefix`.
  std::size_t numel_with_prefix(const std::string& prefix) const;

 private:
  std::vector<NamedParam<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;
};

/// Weight matrices std 0.02; attention and MLP output projections std
/// 0.02/√(2·n_compute); biases 0, layer-norm gains 1. Router weights std 0.02
/// with zero bias. Combination coefficients start at (1, 0, 0).
template <class T>
Model<T> init_model(const ModelConfig& cfg);

/// Copy of `src` under another scheme: every parameter whose name exists in
/// both layouts is copied, the rest keep their fresh initialisation.
template <class T>
Model<T> rescheme(const Model<T>& src, const SchemeSpec& scheme);

/// Router tensors of a mesh model, indexed t + 1.
template <class T>
RouterSet<T> get_routers(const Model<T>& model);
template <class T>
void set_routers(Model<T>& model, const RouterSet<T>& routers);

/// Std of output-projection init for a plan.
double out_proj_std(const LayerPlan& plan);

/// Stack names in evaluation order: "prelude", "core" or "core0".., "coda".
std::vector<std::string> core_stack_names(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Parameters placed on a tape, indexed like the store.
template <class T>
struct BoundParams {
  const ParamStore<T>* store = nullptr;
  std::vector<Var<T>> vars;

  Var<T> get(const std::string& name) const { return vars.at(store->index(name)); }
};

template <class T>
BoundParams<T> bind(const ParamStore<T>& store, Tape<T>& tape, bool trainable);

struct BlockPair {
  std::string block;  // f_pre, f_core0.., f_coda
  std::size_t input = 0;
  std::size_t output = 0;
};

/// Captured states in fixed stage order: h_emb, h0 .. hK, h_out. Block
/// (input, output) pairs reference separately stored tensors.
template <class T>
class StateTrace {
 public:
  void add_stage(const std::string& name, Tensor<T> value);
  void add_block(const std::string& name, Tensor<T> input, Tensor<T> output);

  const std::vector<std::string>& stage_names() const noexcept { return names_; }
  const Tensor<T>& stage(const std::string& name) const;
  const Tensor<T>& stage(std::size_t i) const { return stages_.at(i); }
  std::size_t size() const noexcept { return stages_.size(); }

  const std::vector<BlockPair>& blocks() const noexcept { return blocks_; }
  const Tensor<T>& block_tensor(std::size_t i) const { return block_tensors_.at(i); }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> stages_;
  std::vector<BlockPair> blocks_;
  std::vector<Tensor<T>> block_tensors_;
};

template <class T>
struct ForwardResult {
  Var<T> logits;  // [rows × vocab]
  Var<T> h_out;
  StateTrace<T> trace;
};

/// Tokens hold whole sequences of `seq_len` laid end to end. When `capture`
/// is false the trace stays empty. `mesh_record`, if given, receives the
/// buffer history of a mesh model.
template <class T>
ForwardResult<T> forward(const Model<T>& model, const BoundParams<T>& params, std::span<const std::int32_t> tokens,
                         std::size_t seq_len, bool capture, MeshRecord<T>* mesh_record = nullptr);

/// Convenience: evaluation-only forward on a fresh tape, returning logits.
template <class T>
Tensor<T> forward_logits(const Model<T>& model, std::span<const std::int32_t> tokens, std::size_t seq_len,
                         StateTrace<T>* trace = nullptr);

/// Embedding rows scaled by √d_model.
template <class T>
Var<T> embed(Var<T> table, std::span<const std::int32_t> tokens, int d_model);

/// Sequential pre-LN blocks `{prefix}.{i}` for i < n_layers.
template <class T>
Var<T> apply_stack(const BoundParams<T>& params, const std::string& prefix, int n_layers, Var<T> h, int n_heads,
                   std::size_t seq_len);

}  // namespace meshrt
