#include "meshrt/mesh.hpp"

#include <string>

namespace meshrt {

int default_buffer_len(int n_loop) {
  if (n_loop < 1) throw RangeError("default_buffer_len: n_loop must be >= 1");
  return n_loop + 3;
}

std::int64_t router_param_count(const LayerPlan& plan, std::int64_t d_model, std::int64_t slots, bool with_bias) {
  if (plan.n_loop < 1 || d_model < 1 || slots < 1) throw RangeError("router_param_count: non-positive dimension");
  const std::int64_t steps = plan.n_loop + 1;
  std::int64_t n = steps * d_model * slots * 2;
  if (with_bias) n += steps * slots * 2;
  return n;
}

template <class T>
RouterSet<T> RouterSet<T>::zeros(int n_loop, std::size_t d_model, std::size_t slots) {
  RouterSet<T> rs;
  for (int t = -1; t < n_loop; ++t) {
    rs.write.push_back({Tensor<T>({d_model, slots}), Tensor<T>({slots})});
    rs.read.push_back({Tensor<T>({d_model, slots}), Tensor<T>({slots})});
  }
  return rs;
}

template <class T>
MeshBuffer<T> mesh_init(const Tensor<T>& h_emb, int slots) {
  if (slots < 2) throw ConfigError("mesh buffer needs at least 2 slots, got " + std::to_string(slots));
  MeshBuffer<T> buf;
  buf.slots.reserve(static_cast<std::size_t>(slots));
  buf.slots.push_back(h_emb);
  for (int b = 1; b < slots; ++b) buf.slots.emplace_back(h_emb.shape());
  return buf;
}

template <class T>
Tensor<T> route_weights(const Router<T>& router, const Tensor<T>& h) {
  Tensor<T> logits = matmul(h, router.weight);
  const std::size_t slots = logits.cols();
  if (router.bias.numel() != slots) throw ShapeError("route: bias length does not match slot count");
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t b = 0; b < slots; ++b) logits(i, b) += router.bias[b];
  return softmax_rows(logits);
}

template <class T>
RoutingWeights<T> route(const Router<T>& write, const Router<T>& read, const Tensor<T>& h) {
  return {route_weights(write, h), route_weights(read, h)};
}

namespace {

template <class T>
void check_weights(const MeshBuffer<T>& buf, const Tensor<T>& w, const char* op) {
  if (buf.slots.empty()) throw StateError(std::string(op) + ": empty buffer");
  const Tensor<T>& m0 = buf.slots.front();
  if (w.rank() != 2 || w.cols() != buf.slots.size() || w.rows() != m0.rows())
    throw ShapeError(std::string(op) + ": weights " + shape_str(w.shape()) + " do not match " +
                     std::to_string(buf.slots.size()) + " slots of " + shape_str(m0.shape()));
}

}  // namespace

template <class T>
MeshBuffer<T> mesh_write(const MeshBuffer<T>& buf, const Tensor<T>& h_m, const Tensor<T>& w_write) {
  check_weights(buf, w_write, "mesh_write");
  if (h_m.shape() != buf.slots.front().shape()) throw ShapeError("mesh_write: state shape does not match slots");
  MeshBuffer<T> out = buf;
  const std::size_t rows = h_m.rows(), d = h_m.cols();
  for (std::size_t b = 0; b < out.slots.size(); ++b) {
    Tensor<T>& m = out.slots[b];
    for (std::size_t i = 0; i < rows; ++i) {
      const T w = w_write(i, b);
      const T* h = h_m.row(i);
      T* mi = m.row(i);
      for (std::size_t j = 0; j < d; ++j) mi[j] += h[j] * w;
    }
  }
  return out;
}

template <class T>
Tensor<T> mesh_read(const MeshBuffer<T>& buf, const Tensor<T>& w_read) {
  check_weights(buf, w_read, "mesh_read");
  const Tensor<T>& m0 = buf.slots.front();
  Tensor<T> out(m0.shape());
  const std::size_t rows = m0.rows(), d = m0.cols();
  // Same association order as the differentiable path: slot 0 product first,
  // then one slot product added at a time.
  for (std::size_t b = 0; b < buf.slots.size(); ++b) {
    const Tensor<T>& m = buf.slots[b];
    for (std::size_t i = 0; i < rows; ++i) {
      const T w = w_read(i, b);
      const T* mi = m.row(i);
      T* o = out.row(i);
      for (std::size_t j = 0; j < d; ++j) o[j] = b == 0 ? mi[j] * w : o[j] + mi[j] * w;
    }
  }
  return out;
}

template <class T>
std::vector<RouterVars<T>> bind_routers(Tape<T>& tape, const RouterSet<T>& routers, bool trainable) {
  if (routers.write.size() != routers.read.size()) throw StateError("router set has unequal write/read counts");
  auto put = [&](const Tensor<T>& t) { return trainable ? tape.variable(t) : tape.constant(t); };
  std::vector<RouterVars<T>> out;
  for (std::size_t i = 0; i < routers.write.size(); ++i)
    out.push_back({put(routers.write[i].weight), put(routers.write[i].bias), put(routers.read[i].weight),
                   put(routers.read[i].bias)});
  return out;
}

namespace {

template <class T>
struct VarBuffer {
  std::vector<Var<T>> slots;

  std::vector<Tensor<T>> values() const {
    std::vector<Tensor<T>> v;
    for (const auto& s : slots) v.push_back(s.value());
    return v;
  }
};

template <class T>
void write_vars(VarBuffer<T>& buf, Var<T> h_m, Var<T> w) {
  for (std::size_t b = 0; b < buf.slots.size(); ++b) buf.slots[b] = add(buf.slots[b], col_scale(h_m, w, b));
}

template <class T>
Var<T> read_vars(const VarBuffer<T>& buf, Var<T> w) {
  Var<T> h = col_scale(buf.slots[0], w, 0);
  for (std::size_t b = 1; b < buf.slots.size(); ++b) h = add(h, col_scale(buf.slots[b], w, b));
  return h;
}

template <class T>
Var<T> route_var(Var<T> h, Var<T> w, Var<T> b) {
  return softmax_rows(linear(h, w, b));
}

}  // namespace

template <class T>
MeshRunResult<T> mesh_run(Var<T> h_emb, const std::function<Var<T>(Var<T>)>& f_pre, const CoreFn<T>& f_core, int k,
                          const std::vector<RouterVars<T>>& routers, int slots, MeshRecord<T>* record) {
  if (k < 1) throw RangeError("mesh_run: K must be >= 1");
  if (routers.size() != static_cast<std::size_t>(k + 1))
    throw ConfigError("mesh_run: expected " + std::to_string(k + 1) + " router pairs for K = " + std::to_string(k) +
                      ", got " + std::to_string(routers.size()));
  if (slots < 2) throw ConfigError("mesh buffer needs at least 2 slots, got " + std::to_string(slots));
  for (const auto& r : routers)
    if (r.write_b.value().numel() != static_cast<std::size_t>(slots) ||
        r.read_b.value().numel() != static_cast<std::size_t>(slots))
      throw ConfigError("mesh_run: router width does not match buffer of " + std::to_string(slots) + " slots");

  Tape<T>& tape = *h_emb.tape;
  VarBuffer<T> buf;
  buf.slots.push_back(h_emb);
  const Var<T> zero = tape.constant(Tensor<T>(h_emb.shape()));
  for (int b = 1; b < slots; ++b) buf.slots.push_back(zero);

  if (record) {
    record->h_emb = h_emb.value();
    record->slots = slots;
    record->steps.clear();
  }

  MeshRunResult<T> res;
  auto cycle = [&](int t, Var<T> h_m, Var<T> route_on) {
    const RouterVars<T>& r = routers[static_cast<std::size_t>(t + 1)];
    const Var<T> ww = route_var(route_on, r.write_w, r.write_b);
    const Var<T> wr = route_var(route_on, r.read_w, r.read_b);
    MeshStepRecord<T> rec;
    if (record) rec.slots_before = buf.values();
    write_vars(buf, h_m, ww);
    const Var<T> next = read_vars(buf, wr);
    if (record) {
      rec.t = t;
      rec.h_m = h_m.value();
      rec.w_write = ww.value();
      rec.w_read = wr.value();
      rec.h_next = next.value();
      record->steps.push_back(std::move(rec));
    }
    res.block_outputs.push_back(h_m);
    res.states.push_back(next);
    return next;
  };

  // Transitional cycle: routers at t = -1 see the prelude output itself.
  const Var<T> pre_out = f_pre(h_emb);
  Var<T> h = cycle(-1, pre_out, pre_out);
  for (int t = 0; t < k; ++t) {
    const Var<T> h_m = f_core(h, t);
    h = cycle(t, h_m, h);
  }
  res.h_final = h;
  return res;
}

UnrollStep unroll_step(const MeshBuffer<double>& before, const Tensor<double>& h_m, const Tensor<double>& w_write,
                       const Tensor<double>& w_read) {
  check_weights(before, w_write, "unroll_step");
  check_weights(before, w_read, "unroll_step");
  if (h_m.shape() != before.slots.front().shape()) throw ShapeError("unroll_step: state shape does not match slots");
  UnrollStep out;
  out.historical = mesh_read(before, w_read);
  const std::size_t rows = h_m.rows(), d = h_m.cols(), slots = before.slots.size();
  out.gating = Tensor<double>({rows, 1});
  for (std::size_t i = 0; i < rows; ++i) {
    double g = 0.0;
    for (std::size_t b = 0; b < slots; ++b) g += w_write(i, b) * w_read(i, b);
    out.gating(i, 0) = g;
  }
  out.reconstruction = out.historical;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j) out.reconstruction(i, j) += out.gating(i, 0) * h_m(i, j);
  return out;
}

namespace {

void validate_record(const MeshRecord<double>& rec) {
  if (rec.steps.empty()) throw StateError("full_unroll: record has no steps");
  if (rec.slots < 2) throw StateError("full_unroll: record has no buffer geometry");
  if (rec.h_emb.empty()) throw StateError("full_unroll: record is missing h_emb");
  const std::size_t rows = rec.h_emb.rows();
  for (std::size_t i = 0; i < rec.steps.size(); ++i) {
    const auto& s = rec.steps[i];
    if (s.t != static_cast<int>(i) - 1) throw StateError("full_unroll: steps are not consecutive from t = -1");
    if (s.h_m.shape() != rec.h_emb.shape()) throw StateError("full_unroll: block output missing or misshapen");
    if (s.w_write.rank() != 2 || s.w_read.rank() != 2 || s.w_write.rows() != rows || s.w_read.rows() != rows ||
        s.w_write.cols() != static_cast<std::size_t>(rec.slots) || s.w_read.cols() != static_cast<std::size_t>(rec.slots))
      throw StateError("full_unroll: routing weights missing or misshapen at t = " + std::to_string(s.t));
  }
}

}  // namespace

ExpansionCoeffs full_unroll(const MeshRecord<double>& record) {
  validate_record(record);
  const std::size_t rows = record.h_emb.rows();
  const std::size_t slots = static_cast<std::size_t>(record.slots);
  const std::size_t n_steps = record.steps.size();
  const std::size_t n_sources = n_steps + 1;

  // comp[b](i, s): weight of source s inside slot b for token i.
  std::vector<Tensor<double>> comp(slots, Tensor<double>({rows, n_sources}));
  for (std::size_t i = 0; i < rows; ++i) comp[0](i, 0) = 1.0;

  ExpansionCoeffs out;
  for (std::size_t step = 0; step < n_steps; ++step) {
    const auto& s = record.steps[step];
    const std::size_t src = step + 1;
    for (std::size_t b = 0; b < slots; ++b)
      for (std::size_t i = 0; i < rows; ++i) comp[b](i, src) += s.w_write(i, b);
    const std::size_t live = step + 2;
    Tensor<double> coeff({rows, live});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t b = 0; b < slots; ++b) {
        const double r = s.w_read(i, b);
        for (std::size_t k = 0; k < live; ++k) coeff(i, k) += r * comp[b](i, k);
      }
    out.per_step.push_back(std::move(coeff));
  }
  return out;
}

Tensor<double> reconstruct(const ExpansionCoeffs& coeffs, const MeshRecord<double>& record, int t) {
  const Tensor<double>& c = coeffs.at(t);
  Tensor<double> out(record.h_emb.shape());
  const std::size_t rows = out.rows(), d = out.cols();
  for (std::size_t k = 0; k < c.cols(); ++k) {
    const Tensor<double>& src = k == 0 ? record.h_emb : record.steps.at(k - 1).h_m;
    for (std::size_t i = 0; i < rows; ++i) {
      const double a = c(i, k);
      for (std::size_t j = 0; j < d; ++j) out(i, j) += a * src(i, j);
    }
  }
  return out;
}

namespace {

template <class T>
Router<T> one_hot_router(std::size_t d_model, std::size_t slots, std::size_t hot) {
  Router<T> r{Tensor<T>({d_model, slots}), Tensor<T>({slots})};
  r.bias[hot] = static_cast<T>(kSaturationLogit);
  return r;
}

}  // namespace

template <class T>
RouterSet<T> pin_simulation(SchemeKind target, const PinGeometry& g) {
  const int k = g.n_loop;
  const int slots = g.slots;
  if (k < 1 || g.d_model == 0) throw ConfigError("pin_simulation: need n_loop >= 1 and d_model >= 1");
  if (slots < 2) throw ConfigError("pin_simulation: need at least 2 slots");

  // (write slot, read slot) for t = -1 .. K-1
  std::vector<std::pair<int, int>> plan;
  switch (target) {
    case SchemeKind::Residual:
      for (int t = -1; t < k; ++t) plan.emplace_back(1, 1);
      break;
    case SchemeKind::Base:
      if (slots < k + 2)
        throw ConfigError("pin_simulation(base): needs B >= K + 2 = " + std::to_string(k + 2) + " fresh slots");
      for (int t = -1; t < k; ++t) plan.emplace_back(t + 2, t + 2);
      break;
    case SchemeKind::Anchor:
    case SchemeKind::AnchorStar:
      if (k != 1)
        throw ConfigError("pin_simulation(" + to_string(target) +
                          "): not representable for K >= 2 with row-stochastic routing; the slot holding the "
                          "anchor state must also absorb every core output");
      plan.emplace_back(1, 1);
      plan.push_back(target == SchemeKind::Anchor ? std::pair{1, 1} : std::pair{0, 0});
      break;
    default:
      throw ConfigError("pin_simulation: no pinned routing for scheme " + to_string(target));
  }

  RouterSet<T> rs;
  const std::size_t b = static_cast<std::size_t>(slots);
  for (const auto& [w, r] : plan) {
    rs.write.push_back(one_hot_router<T>(g.d_model, b, static_cast<std::size_t>(w)));
    rs.read.push_back(one_hot_router<T>(g.d_model, b, static_cast<std::size_t>(r)));
  }
  return rs;
}

#define MESHRT_MESH_INSTANTIATE(T)                                                                              \
  template struct RouterSet<T>;                                                                                 \
  template MeshBuffer<T> mesh_init(const Tensor<T>&, int);                                                      \
  template Tensor<T> route_weights(const Router<T>&, const Tensor<T>&);                                         \
  template RoutingWeights<T> route(const Router<T>&, const Router<T>&, const Tensor<T>&);                       \
  template MeshBuffer<T> mesh_write(const MeshBuffer<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mesh_read(const MeshBuffer<T>&, const Tensor<T>&);                                         \
  template std::vector<RouterVars<T>> bind_routers(Tape<T>&, const RouterSet<T>&, bool);                        \
  template MeshRunResult<T> mesh_run(Var<T>, const std::function<Var<T>(Var<T>)>&, const CoreFn<T>&, int,       \
                                     const std::vector<RouterVars<T>>&, int, MeshRecord<T>*);                   \
  template RouterSet<T> pin_simulation(SchemeKind, const PinGeometry&);

MESHRT_MESH_INSTANTIATE(float)
MESHRT_MESH_INSTANTIATE(double)

}  // namespace meshrt
