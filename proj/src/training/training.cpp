#include "meshrt/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "meshrt/checkpoint.hpp"

namespace meshrt {

void validate(const TrainConfig& c) {
  if (!(c.peak_lr > 0.0)) throw ConfigError("peak_lr must be positive");
  if (!(c.warmup_frac > 0.0 && c.warmup_frac < 1.0)) throw ConfigError("warmup_frac must lie in (0, 1)");
  if (!(c.final_lr_frac >= 0.0 && c.final_lr_frac < 1.0)) throw ConfigError("final_lr_frac must lie in [0, 1)");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
    throw ConfigError("betas must lie in [0, 1)");
  if (!(c.eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (c.steps < 1 || c.batch < 1 || c.seq_len < 1) throw ConfigError("steps, batch and seq_len must be positive");
  if (c.eval_every < 0 || c.checkpoint_every < 0) throw ConfigError("cadences must be non-negative");
}

double lr_at(int step, const TrainConfig& c) {
  if (step < 0 || step >= c.steps)
    throw RangeError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(c.steps) + ")");
  const int warm = std::max(1, static_cast<int>(std::ceil(c.warmup_frac * c.steps)));
  const double final_lr = c.final_lr_frac * c.peak_lr;
  if (step < warm) return c.peak_lr * static_cast<double>(step) / warm;
  const int last = c.steps - 1;
  if (last <= warm) return final_lr;  // too short for a decay phase; only step == last lands here
  const double progress = static_cast<double>(step - warm) / static_cast<double>(last - warm);
  return final_lr + (c.peak_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
AdamState<T> adam_init(const ParamStore<T>& params) {
  AdamState<T> s;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

template <class T>
double global_norm(const std::vector<Tensor<T>>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) s += static_cast<double>(g[i]) * static_cast<double>(g[i]);
  return std::sqrt(s);
}

template <class T>
void adamw_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& st, double lr,
                const TrainConfig& c) {
  if (grads.size() != params.size() || st.m.size() != params.size())
    throw ShapeError("adamw_step: parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape())
      throw ShapeError("adamw_step: gradient shape mismatch for '" + params[i].name + "'");
    if (!all_finite(grads[i])) throw NumericalError("non-finite gradient for '" + params[i].name + "'; step aborted");
  }
  const std::int64_t t = st.t + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor<T>& w = params[i].value;
    Tensor<T>& m = st.m[i];
    Tensor<T>& v = st.v[i];
    const Tensor<T>& g = grads[i];
    const double decay = params[i].decay ? lr * c.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.numel(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const double mhat = static_cast<double>(m[k]) / bc1;
      const double vhat = static_cast<double>(v[k]) / bc2;
      double x = static_cast<double>(w[k]);
      x -= decay * x;
      x -= lr * mhat / (std::sqrt(vhat) + c.eps);
      w[k] = static_cast<T>(x);
    }
  }
  st.t = t;
}

template <class T>
StepStats train_step(Model<T>& model, AdamState<T>& state, const Batch& batch, double lr, const TrainConfig& cfg) {
  Tape<T> tape(true);
  const BoundParams<T> P = bind(model.params, tape, true);
  const ForwardResult<T> fwd = forward(model, P, batch.tokens, batch.seq_len, false);
  const Var<T> loss = cross_entropy(fwd.logits, std::span<const std::int32_t>(batch.targets));
  tape.backward(loss);

  std::vector<Tensor<T>> grads;
  grads.reserve(P.vars.size());
  for (const auto& v : P.vars) grads.push_back(tape.grad(v));

  StepStats s;
  s.loss = static_cast<double>(loss.value()[0]);
  s.grad_norm = global_norm(grads);
  if (!std::isfinite(s.grad_norm)) throw NumericalError("non-finite gradient norm; step aborted");
  if (cfg.clip_norm > 0.0 && s.grad_norm > cfg.clip_norm) {
    const T f = static_cast<T>(cfg.clip_norm / s.grad_norm);
    for (auto& g : grads)
      for (auto& x : g.data()) x *= f;
    s.clipped = true;
  }
  adamw_step(model.params, grads, state, lr, cfg);
  return s;
}

template <class T>
double eval_loss(const Model<T>& model, const Batch& batch) {
  Tape<T> tape(false);
  const BoundParams<T> P = bind(model.params, tape, false);
  const ForwardResult<T> fwd = forward(model, P, batch.tokens, batch.seq_len, false);
  return static_cast<double>(cross_entropy(fwd.logits, std::span<const std::int32_t>(batch.targets)).value()[0]);
}

template <class T>
double query_accuracy(const Model<T>& model, const Batch& batch) {
  const Tensor<T> logits = forward_logits(model, batch.tokens, batch.seq_len);
  const std::size_t V = logits.cols();
  std::size_t hit = 0;
  for (std::size_t s = 0; s < batch.batch; ++s) {
    const std::size_t r = (s + 1) * batch.seq_len - 1;
    const T* row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < V; ++j)
      if (row[j] > row[best]) best = j;
    if (static_cast<std::int32_t>(best) == batch.targets[r]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(batch.batch);
}

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string ckpt_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06d.bin", step);
  return buf;
}

}  // namespace

template <class T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, DataSource& data, const std::filesystem::path& out,
                  const std::string& run_json, const LogFn& log) {
  validate(cfg);
  if (data.vocab() > model.config.vocab)
    throw ConfigError("data vocabulary " + std::to_string(data.vocab()) + " exceeds model vocab " +
                      std::to_string(model.config.vocab));
  if (cfg.seq_len > model.config.max_seq) throw ConfigError("seq_len exceeds the model's max_seq");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());

  std::ofstream loss_csv(out / "loss.csv", std::ios::trunc);
  if (!loss_csv) throw IoError("cannot write loss.csv in '" + out.string() + "'");
  loss_csv << "step,loss,lr,grad_norm\n";

  auto* needle = dynamic_cast<NeedleSource*>(&data);
  std::ofstream needle_csv;
  Batch needle_eval;
  if (needle) {
    needle_csv.open(out / "needle_eval.csv", std::ios::trunc);
    needle_csv << "step,query_accuracy\n";
    NeedleSource held_out(needle->layout(), needle->distance(), cfg.seed ^ 0x5eedf00dULL);
    needle_eval = held_out.next(128, static_cast<std::size_t>(cfg.seq_len));
  }

  const int ckpt_every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : std::max(1, cfg.steps / 10);
  AdamState<T> state = adam_init(model.params);
  TrainResult res;
  for (int step = 0; step < cfg.steps; ++step) {
    const Batch b = data.next(static_cast<std::size_t>(cfg.batch), static_cast<std::size_t>(cfg.seq_len));
    const double lr = lr_at(step, cfg);
    const StepStats s = train_step(model, state, b, lr, cfg);
    res.losses.push_back(s.loss);
    loss_csv << step << "," << g17(s.loss) << "," << g17(lr) << "," << g17(s.grad_norm) << "\n";
    if (log && (step % std::max(1, cfg.steps / 20) == 0 || step + 1 == cfg.steps))
      log("step " + std::to_string(step) + " loss " + g17(s.loss) + " lr " + g17(lr) +
          (s.clipped ? " (clipped from " + g17(s.grad_norm) + ")" : ""));
    const bool last = step + 1 == cfg.steps;
    if (needle && ((cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) || last)) {
      const double acc = query_accuracy(model, needle_eval);
      needle_csv << step + 1 << "," << g17(acc) << "\n";
      res.needle_accuracy.emplace_back(step + 1, acc);
    }
    if (!last && (step + 1) % ckpt_every == 0) save_checkpoint(out / ckpt_name(step + 1), model, run_json);
  }
  loss_csv.flush();
  if (!loss_csv) throw IoError("write to loss.csv failed");
  res.final_checkpoint = out / "final.bin";
  save_checkpoint(res.final_checkpoint, model, run_json);
  return res;
}

#define MESHRT_TRAIN_INSTANTIATE(T)                                                                          \
  template AdamState<T> adam_init(const ParamStore<T>&);                                                     \
  template double global_norm(const std::vector<Tensor<T>>&);                                                \
  template void adamw_step(ParamStore<T>&, const std::vector<Tensor<T>>&, AdamState<T>&, double,              \
                           const TrainConfig&);                                                              \
  template StepStats train_step(Model<T>&, AdamState<T>&, const Batch&, double, const TrainConfig&);          \
  template double eval_loss(const Model<T>&, const Batch&);                                                  \
  template double query_accuracy(const Model<T>&, const Batch&);                                             \
  template TrainResult train(Model<T>&, const TrainConfig&, DataSource&, const std::filesystem::path&,        \
                             const std::string&, const LogFn&);

MESHRT_TRAIN_INSTANTIATE(float)
MESHRT_TRAIN_INSTANTIATE(double)

}  // namespace meshrt
