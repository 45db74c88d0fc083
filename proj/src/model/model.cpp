#include "meshrt/model.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "meshrt/rng.hpp"

namespace meshrt {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
  if (pos != v.size() || x < -2147483647LL || x > 2147483647LL)
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

}  // namespace

ModelConfig validate(ModelConfig cfg) {
  if (cfg.d_model < 1 || cfg.n_heads < 1) throw ConfigError("d_model and n_heads must be positive");
  if (cfg.d_model % cfg.n_heads != 0)
    throw ConfigError("d_model " + std::to_string(cfg.d_model) + " is not divisible by n_heads " +
                      std::to_string(cfg.n_heads));
  if ((cfg.d_model / cfg.n_heads) % 2 != 0) throw ConfigError("head width must be even for rotary embeddings");
  if (cfg.d_ff < 1) throw ConfigError("d_ff must be positive");
  if (cfg.vocab < 2) throw ConfigError("vocab must be at least 2");
  if (cfg.max_seq < 1) throw ConfigError("max_seq must be positive");
  if (cfg.plan.l_core < 1 || cfg.plan.n_loop < 1) throw ConfigError("plan needs a core of at least one layer");
  if (!cfg.plan.recursive && cfg.scheme.kind != SchemeKind::Base)
    throw ConfigError("a plain layer stack only supports the base scheme");
  cfg.scheme = resolve_scheme(cfg.scheme, cfg.plan);
  return cfg;
}

std::map<std::string, std::string> to_kv(const ModelConfig& cfg) {
  return {{"d_model", std::to_string(cfg.d_model)},
          {"n_heads", std::to_string(cfg.n_heads)},
          {"d_ff", std::to_string(cfg.d_ff)},
          {"vocab", std::to_string(cfg.vocab)},
          {"max_seq", std::to_string(cfg.max_seq)},
          {"plan", format_plan(cfg.plan)},
          {"scheme", to_string(cfg.scheme.kind)},
          {"buffer", std::to_string(cfg.scheme.mesh_slots)},
          {"share_core", cfg.scheme.share_core ? "true" : "false"},
          {"dtype", to_string(cfg.dtype)},
          {"seed", std::to_string(cfg.seed)}};
}

void apply_kv(ModelConfig& cfg, const std::string& key, const std::string& value, bool* consumed) {
  bool used = true;
  if (key == "d_model") cfg.d_model = parse_int(key, value);
  else if (key == "n_heads") cfg.n_heads = parse_int(key, value);
  else if (key == "d_ff") cfg.d_ff = parse_int(key, value);
  else if (key == "vocab") cfg.vocab = parse_int(key, value);
  else if (key == "max_seq") cfg.max_seq = parse_int(key, value);
  else if (key == "plan") cfg.plan = parse_plan(value);
  else if (key == "scheme") cfg.scheme.kind = parse_scheme_kind(value);
  else if (key == "buffer") cfg.scheme.mesh_slots = parse_int(key, value);
  else if (key == "share_core") cfg.scheme.share_core = parse_bool(key, value);
  else if (key == "dtype") cfg.dtype = parse_dtype(value);
  else if (key == "seed") {
    try {
      std::size_t pos = 0;
      cfg.seed = std::stoull(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigError("'seed' expects an unsigned integer, got '" + value + "'");
    }
  } else used = false;
  if (consumed) *consumed = used;
}

std::string config_hash(const ModelConfig& cfg) {
  std::string text;
  for (const auto& [k, v] : to_kv(cfg)) text += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

// ---------------------------------------------------------------------------

template <class T>
void ParamStore<T>::add(std::string name, Tensor<T> value, bool decay) {
  if (index_.count(name)) throw StateError("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), std::move(value), decay});
}

template <class T>
std::size_t ParamStore<T>::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError("no parameter named '" + name + "'");
  return it->second;
}

template <class T>
std::size_t ParamStore<T>::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <class T>
std::size_t ParamStore<T>::numel_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.name.compare(0, prefix.size(), prefix) == 0) n += p.value.numel();
  return n;
}

double out_proj_std(const LayerPlan& plan) { return 0.02 / std::sqrt(2.0 * plan.n_compute()); }

std::vector<std::string> core_stack_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  if (cfg.scheme.share_core) {
    names.push_back("core");
  } else {
    for (int c = 0; c < cfg.plan.n_loop; ++c) names.push_back("core" + std::to_string(c));
  }
  return names;
}

namespace {

template <class T>
class Initializer {
 public:
  Initializer(ParamStore<T>& store, std::uint64_t seed) : store_(store), root_(seed, 0) {}

  void normal(const std::string& name, Shape shape, double std) {
    Rng rng = root_.split(fnv1a(name));
    store_.add(name, randn<T>(rng, std::move(shape), std), true);
  }
  void constant(const std::string& name, Shape shape, T value, bool decay = false) {
    store_.add(name, Tensor<T>::full(std::move(shape), value), decay);
  }
  void vector(const std::string& name, std::initializer_list<T> values) {
    store_.add(name, Tensor<T>::vector(values), false);
  }

 private:
  ParamStore<T>& store_;
  Rng root_;
};

template <class T>
void init_stack(Initializer<T>& in, const std::string& prefix, int n_layers, std::size_t d, std::size_t ff,
                double proj_std) {
  for (int i = 0; i < n_layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i) + ".";
    in.constant(p + "ln1.g", {d}, T(1));
    in.constant(p + "ln1.b", {d}, T(0));
    for (const char* m : {"q", "k", "v"}) {
      in.normal(p + "attn." + m + ".w", {d, d}, 0.02);
      in.constant(p + "attn." + m + ".b", {d}, T(0));
    }
    in.normal(p + "attn.out.w", {d, d}, proj_std);
    in.constant(p + "attn.out.b", {d}, T(0));
    in.constant(p + "ln2.g", {d}, T(1));
    in.constant(p + "ln2.b", {d}, T(0));
    in.normal(p + "mlp.up.w", {d, ff}, 0.02);
    in.constant(p + "mlp.up.b", {ff}, T(0));
    in.normal(p + "mlp.down.w", {ff, d}, proj_std);
    in.constant(p + "mlp.down.b", {d}, T(0));
  }
}

std::string router_name(int t, const char* dir, const char* part) {
  return "mesh.router." + std::to_string(t) + "." + dir + "." + part;
}

}  // namespace

template <class T>
Model<T> init_model(const ModelConfig& raw) {
  Model<T> m;
  m.config = validate(raw);
  const ModelConfig& c = m.config;
  const std::size_t d = static_cast<std::size_t>(c.d_model), ff = static_cast<std::size_t>(c.d_ff);
  const double proj = out_proj_std(c.plan);
  Initializer<T> in(m.params, c.seed);

  in.normal("embed.weight", {static_cast<std::size_t>(c.vocab), d}, 0.02);
  init_stack(in, "prelude", c.plan.l_pre, d, ff, proj);
  for (const auto& name : core_stack_names(c)) init_stack(in, name, c.plan.l_core, d, ff, proj);
  init_stack(in, "coda", c.plan.l_coda, d, ff, proj);
  in.constant("ln_f.g", {d}, T(1));
  in.constant("ln_f.b", {d}, T(0));

  switch (c.scheme.kind) {
    case SchemeKind::StaticComb:
      in.vector("comb.alpha", {T(1), T(0), T(0)});
      break;
    case SchemeKind::DynamicComb:
      in.normal("comb.head.w", {d, 3}, 0.02);
      in.vector("comb.head.b", {T(1), T(0), T(0)});
      break;
    case SchemeKind::Mesh: {
      const std::size_t b = static_cast<std::size_t>(c.scheme.mesh_slots);
      for (int t = -1; t < c.plan.n_loop; ++t)
        for (const char* dir : {"write", "read"}) {
          in.normal(router_name(t, dir, "w"), {d, b}, 0.02);
          in.constant(router_name(t, dir, "b"), {b}, T(0));
        }
      break;
    }
    default:
      break;
  }
  return m;
}

template <class T>
Model<T> rescheme(const Model<T>& src, const SchemeSpec& scheme) {
  ModelConfig cfg = src.config;
  cfg.scheme = scheme;
  Model<T> m = init_model<T>(cfg);
  for (auto& p : m.params)
    if (src.params.contains(p.name)) {
      const Tensor<T>& v = src.params.at(p.name);
      if (v.shape() == p.value.shape()) p.value = v;
    }
  return m;
}

template <class T>
RouterSet<T> get_routers(const Model<T>& model) {
  if (model.config.scheme.kind != SchemeKind::Mesh) throw ConfigError("model has no mesh routers");
  RouterSet<T> rs;
  for (int t = -1; t < model.config.plan.n_loop; ++t) {
    rs.write.push_back({model.params.at(router_name(t, "write", "w")), model.params.at(router_name(t, "write", "b"))});
    rs.read.push_back({model.params.at(router_name(t, "read", "w")), model.params.at(router_name(t, "read", "b"))});
  }
  return rs;
}

template <class T>
void set_routers(Model<T>& model, const RouterSet<T>& rs) {
  if (model.config.scheme.kind != SchemeKind::Mesh) throw ConfigError("model has no mesh routers");
  if (rs.n_loop() != model.config.plan.n_loop) throw ShapeError("router set covers a different loop count");
  for (int t = -1; t < model.config.plan.n_loop; ++t) {
    auto put = [&](const char* dir, const char* part, const Tensor<T>& v) {
      Tensor<T>& dst = model.params.at(router_name(t, dir, part));
      if (dst.shape() != v.shape()) throw ShapeError("router tensor " + router_name(t, dir, part) + " has the wrong shape");
      dst = v;
    };
    put("write", "w", rs.write_at(t).weight);
    put("write", "b", rs.write_at(t).bias);
    put("read", "w", rs.read_at(t).weight);
    put("read", "b", rs.read_at(t).bias);
  }
}

// ---------------------------------------------------------------------------

template <class T>
BoundParams<T> bind(const ParamStore<T>& store, Tape<T>& tape, bool trainable) {
  BoundParams<T> b;
  b.store = &store;
  b.vars.reserve(store.size());
  for (const auto& p : store) b.vars.push_back(trainable ? tape.variable(p.value) : tape.constant(p.value));
  return b;
}

template <class T>
void StateTrace<T>::add_stage(const std::string& name, Tensor<T> value) {
  for (const auto& n : names_)
    if (n == name) throw StateError("stage '" + name + "' captured twice in one pass");
  names_.push_back(name);
  stages_.push_back(std::move(value));
}

template <class T>
void StateTrace<T>::add_block(const std::string& name, Tensor<T> input, Tensor<T> output) {
  for (const auto& b : blocks_)
    if (b.block == name) throw StateError("block '" + name + "' captured twice in one pass");
  const std::size_t i = block_tensors_.size();
  block_tensors_.push_back(std::move(input));
  block_tensors_.push_back(std::move(output));
  blocks_.push_back({name, i, i + 1});
}

template <class T>
const Tensor<T>& StateTrace<T>::stage(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return stages_[i];
  throw StateError("trace has no stage '" + name + "'");
}

template <class T>
Var<T> embed(Var<T> table, std::span<const std::int32_t> tokens, int d_model) {
  return scale(embedding(table, tokens), static_cast<T>(std::sqrt(static_cast<double>(d_model))));
}

template <class T>
Var<T> apply_stack(const BoundParams<T>& P, const std::string& prefix, int n_layers, Var<T> h, int n_heads,
                   std::size_t seq_len) {
  const std::size_t H = static_cast<std::size_t>(n_heads);
  for (int i = 0; i < n_layers; ++i) {
    const std::string p = prefix + "." + std::to_string(i) + ".";
    const Var<T> a = layer_norm(h, P.get(p + "ln1.g"), P.get(p + "ln1.b"));
    Var<T> q = linear(a, P.get(p + "attn.q.w"), P.get(p + "attn.q.b"));
    Var<T> k = linear(a, P.get(p + "attn.k.w"), P.get(p + "attn.k.b"));
    const Var<T> v = linear(a, P.get(p + "attn.v.w"), P.get(p + "attn.v.b"));
    q = rope(q, H, seq_len);
    k = rope(k, H, seq_len);
    const Var<T> att = causal_attention(q, k, v, H, seq_len);
    h = add(h, linear(att, P.get(p + "attn.out.w"), P.get(p + "attn.out.b")));
    const Var<T> m = layer_norm(h, P.get(p + "ln2.g"), P.get(p + "ln2.b"));
    const Var<T> up = gelu(linear(m, P.get(p + "mlp.up.w"), P.get(p + "mlp.up.b")));
    h = add(h, linear(up, P.get(p + "mlp.down.w"), P.get(p + "mlp.down.b")));
  }
  return h;
}

template <class T>
ForwardResult<T> forward(const Model<T>& model, const BoundParams<T>& P, std::span<const std::int32_t> tokens,
                         std::size_t seq_len, bool capture, MeshRecord<T>* mesh_record) {
  const ModelConfig& c = model.config;
  if (P.store != &model.params) throw StateError("forward: parameters were bound from a different model");
  if (tokens.empty() || seq_len == 0 || tokens.size() % seq_len != 0)
    throw ShapeError("forward: " + std::to_string(tokens.size()) + " tokens do not form whole sequences of " +
                     std::to_string(seq_len));
  if (seq_len > static_cast<std::size_t>(c.max_seq))
    throw RangeError("forward: sequence length " + std::to_string(seq_len) + " exceeds max_seq " +
                     std::to_string(c.max_seq));

  ForwardResult<T> res;
  StateTrace<T>& tr = res.trace;
  const int K = c.plan.n_loop;
  const bool shared = c.scheme.share_core;

  const Var<T> h_emb = embed(P.get("embed.weight"), tokens, c.d_model);

  auto run_block = [&](const std::string& block, const std::string& prefix, int layers, Var<T> h) {
    const Var<T> out = layers > 0 ? apply_stack(P, prefix, layers, h, c.n_heads, seq_len) : h;
    if (capture) tr.add_block(block, h.value(), out.value());
    return out;
  };
  const std::function<Var<T>(Var<T>)> f_pre = [&](Var<T> h) {
    return run_block("f_pre", "prelude", c.plan.l_pre, h);
  };
  const CoreFn<T> f_core = [&](Var<T> h, int step) {
    return run_block("f_core" + std::to_string(step), shared ? "core" : "core" + std::to_string(step),
                     c.plan.l_core, h);
  };

  std::vector<Var<T>> states;  // h0 .. hK
  if (c.scheme.kind == SchemeKind::Mesh) {
    std::vector<RouterVars<T>> routers;
    for (int t = -1; t < K; ++t)
      routers.push_back({P.get(router_name(t, "write", "w")), P.get(router_name(t, "write", "b")),
                         P.get(router_name(t, "read", "w")), P.get(router_name(t, "read", "b"))});
    MeshRunResult<T> run = mesh_run(h_emb, f_pre, f_core, K, routers, c.scheme.mesh_slots, mesh_record);
    states = std::move(run.states);
  } else {
    const Var<T> h0 = f_pre(h_emb);
    CombParams<T> comb;
    if (c.scheme.kind == SchemeKind::StaticComb) comb.alpha = P.get("comb.alpha");
    if (c.scheme.kind == SchemeKind::DynamicComb) {
      comb.head_w = P.get("comb.head.w");
      comb.head_b = P.get("comb.head.b");
    }
    LoopResult<T> run = run_loop(c.scheme, comb, h0, h_emb, f_core, K, seq_len);
    states.push_back(h0);
    for (const auto& s : run.states) states.push_back(s);
  }

  const Var<T> h_out = run_block("f_coda", "coda", c.plan.l_coda, states.back());
  const Var<T> normed = layer_norm(h_out, P.get("ln_f.g"), P.get("ln_f.b"));
  res.logits = matmul_nt(normed, P.get("embed.weight"));
  res.h_out = h_out;

  if (capture) {
    tr.add_stage("h_emb", h_emb.value());
    for (std::size_t t = 0; t < states.size(); ++t) tr.add_stage("h" + std::to_string(t), states[t].value());
    tr.add_stage("h_out", h_out.value());
  }
  return res;
}

template <class T>
Tensor<T> forward_logits(const Model<T>& model, std::span<const std::int32_t> tokens, std::size_t seq_len,
                         StateTrace<T>* trace) {
  Tape<T> tape(false);
  const BoundParams<T> P = bind(model.params, tape, false);
  ForwardResult<T> r = forward(model, P, tokens, seq_len, trace != nullptr);
  if (trace) *trace = std::move(r.trace);
  return r.logits.value();
}

#define MESHRT_MODEL_INSTANTIATE(T)                                                                          \
  template class ParamStore<T>;                                                                              \
  template class StateTrace<T>;                                                                              \
  template Model<T> init_model(const ModelConfig&);                                                          \
  template Model<T> rescheme(const Model<T>&, const SchemeSpec&);                                            \
  template RouterSet<T> get_routers(const Model<T>&);                                                        \
  template void set_routers(Model<T>&, const RouterSet<T>&);                                                 \
  template BoundParams<T> bind(const ParamStore<T>&, Tape<T>&, bool);                                        \
  template Var<T> embed(Var<T>, std::span<const std::int32_t>, int);                                         \
  template Var<T> apply_stack(const BoundParams<T>&, const std::string&, int, Var<T>, int, std::size_t);     \
  template ForwardResult<T> forward(const Model<T>&, const BoundParams<T>&, std::span<const std::int32_t>,    \
                                    std::size_t, bool, MeshRecord<T>*);                                      \
  template Tensor<T> forward_logits(const Model<T>&, std::span<const std::int32_t>, std::size_t, StateTrace<T>*);

MESHRT_MODEL_INSTANTIATE(float)
MESHRT_MODEL_INSTANTIATE(double)

}  // namespace meshrt
