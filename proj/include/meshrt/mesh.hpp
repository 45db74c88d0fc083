#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "meshrt/autograd.hpp"
#include "meshrt/plan.hpp"
#include "meshrt/recurrence.hpp"
#include "meshrt/scheme.hpp"

namespace meshrt {

/// B = n_loop + 3: one slot per major state (prelude output plus each loop
/// output) and two scratch slots.
int default_buffer_len(int n_loop);

/// Router parameters: (n_loop + 1) steps × {write, read} × D×B weights, plus
/// one B-vector bias per router when `with_bias`.
std::int64_t router_param_count(const LayerPlan& plan, std::int64_t d_model, std::int64_t slots, bool with_bias);

// ---------------------------------------------------------------------------
// Tensor-level buffer operations
// ---------------------------------------------------------------------------

/// Linear D→B map; routing weights are softmax(h·weight + bias) per token.
template <class T>
struct Router {
  Tensor<T> weight;  // [D×B]
  Tensor<T> bias;    // [B]
};

/// Write/read routers for steps t = -1 (transitional prelude cycle) through
/// K-1, stored at index t + 1.
template <class T>
struct RouterSet {
  std::vector<Router<T>> write;
  std::vector<Router<T>> read;

  static RouterSet zeros(int n_loop, std::size_t d_model, std::size_t slots);
  int n_loop() const noexcept { return static_cast<int>(write.size()) - 1; }
  Router<T>& write_at(int t) { return write.at(static_cast<std::size_t>(t + 1)); }
  Router<T>& read_at(int t) { return read.at(static_cast<std::size_t>(t + 1)); }
  const Router<T>& write_at(int t) const { return write.at(static_cast<std::size_t>(t + 1)); }
  const Router<T>& read_at(int t) const { return read.at(static_cast<std::size_t>(t + 1)); }
};

template <class T>
struct MeshBuffer {
  std::vector<Tensor<T>> slots;  // B tensors, each shaped like the hidden state
};

template <class T>
struct RoutingWeights {
  Tensor<T> write;  // [L×B], rows sum to 1
  Tensor<T> read;
};

/// Slot 0 holds h_emb, every other slot is zero. Throws ConfigError if B < 2.
template <class T>
MeshBuffer<T> mesh_init(const Tensor<T>& h_emb, int slots);

template <class T>
Tensor<T> route_weights(const Router<T>& router, const Tensor<T>& h);

template <class T>
RoutingWeights<T> route(const Router<T>& write, const Router<T>& read, const Tensor<T>& h);

/// m_b ← m_b + h_m ⊙ w[:, b] for every slot.
template <class T>
MeshBuffer<T> mesh_write(const MeshBuffer<T>& buf, const Tensor<T>& h_m, const Tensor<T>& w_write);

/// Σ_b m_b ⊙ w[:, b]
template <class T>
Tensor<T> mesh_read(const MeshBuffer<T>& buf, const Tensor<T>& w_read);

// ---------------------------------------------------------------------------
// Differentiable compute-write-read cycle
// ---------------------------------------------------------------------------

template <class T>
struct RouterVars {
  Var<T> write_w, write_b, read_w, read_b;
};

/// Places every router tensor on the tape (as variables when `trainable`).
template <class T>
std::vector<RouterVars<T>> bind_routers(Tape<T>& tape, const RouterSet<T>& routers, bool trainable);

/// Values seen at one cycle, for unrolling and inspection.
template <class T>
struct MeshStepRecord {
  int t = 0;
  std::vector<Tensor<T>> slots_before;
  Tensor<T> h_m;
  Tensor<T> w_write;
  Tensor<T> w_read;
  Tensor<T> h_next;
};

template <class T>
struct MeshRecord {
  Tensor<T> h_emb;
  int slots = 0;
  std::vector<MeshStepRecord<T>> steps;  // t = -1 .. K-1 in order
};

template <class T>
struct MeshRunResult {
  Var<T> h_final;                     // h(K), handed to the coda
  std::vector<Var<T>> states;         // h(0) .. h(K)
  std::vector<Var<T>> block_outputs;  // h_m for t = -1 .. K-1
};

/// Full buffered recurrence: initialise the buffer from h_emb, run the
/// transitional cycle on the prelude output (routed on that output), then K
/// cycles where the core output is written and the next state read back,
/// routing on h(t).
template <class T>
MeshRunResult<T> mesh_run(Var<T> h_emb, const std::function<Var<T>(Var<T>)>& f_pre, const CoreFn<T>& f_core, int k,
                          const std::vector<RouterVars<T>>& routers, int slots, MeshRecord<T>* record = nullptr);

// ---------------------------------------------------------------------------
// Unrolled views of the cycle
// ---------------------------------------------------------------------------

struct UnrollStep {
  Tensor<double> historical;      // Σ_b m_b ⊙ r_b, before the write
  Tensor<double> gating;          // [L×1]: Σ_b w_b · r_b per token
  Tensor<double> reconstruction;  // historical + gating ⊙ h_m
};

UnrollStep unroll_step(const MeshBuffer<double>& before, const Tensor<double>& h_m, const Tensor<double>& w_write,
                       const Tensor<double>& w_read);

/// Per-token coefficients expressing each read state as a combination of the
/// sources written so far. Source 0 is h_emb; source s ≥ 1 is the block
/// output of step t = s - 2 (s = 1 is the prelude output).
struct ExpansionCoeffs {
  std::vector<Tensor<double>> per_step;  // index t + 1 → [rows × (t + 3)]

  const Tensor<double>& at(int t) const { return per_step.at(static_cast<std::size_t>(t + 1)); }
};

/// Forward-propagates slot-composition weights through a complete record.
/// Throws StateError on an incomplete or inconsistent record.
ExpansionCoeffs full_unroll(const MeshRecord<double>& record);

/// Σ_s coeff_s ⊙ source_s for the state produced at step t.
Tensor<double> reconstruct(const ExpansionCoeffs& coeffs, const MeshRecord<double>& record, int t);

// ---------------------------------------------------------------------------
// Pinned routers that make the cycle reproduce a fixed recurrence
// ---------------------------------------------------------------------------

struct PinGeometry {
  int n_loop = 1;
  int slots = 0;
  std::size_t d_model = 0;
};

/// Logit margin used for one-hot routing; off-slot weights are ~e^-40.
inline constexpr double kSaturationLogit = 40.0;

/// Input-independent saturated routers under which mesh_run reproduces
/// `target` (Base, Residual, Anchor, AnchorStar).
///
/// Residual: every cycle writes and reads one accumulator slot (B ≥ 2).
/// Base: each cycle writes and reads a fresh scratch slot (B ≥ K + 2).
/// Anchor / AnchorStar: only K = 1. Reads are convex per token, so a unit
/// coefficient on h(0) (or h_emb) forces every read onto the single slot that
/// holds it, and a unit coefficient on the current core output forces every
/// write there too; from the second step on that slot still carries the
/// previous core output. Throws ConfigError for unsupported geometry.
template <class T>
RouterSet<T> pin_simulation(SchemeKind target, const PinGeometry& geometry);

}  // namespace meshrt
