#include "meshrt/meshrt.h"

#include <cstring>
#include <exception>
#include <string>
#include <variant>

#include "meshrt/checkpoint.hpp"
#include "meshrt/errors.hpp"
#include "meshrt/mesh.hpp"
#include "meshrt/plan.hpp"
#include "meshrt/run_config.hpp"
#include "meshrt/runs.hpp"
#include "meshrt/selftest.hpp"

struct meshrt_config {
  meshrt::RunConfig cfg;
};

struct meshrt_model {
  std::variant<meshrt::Model<float>, meshrt::Model<double>> model;
};

namespace {

thread_local std::string g_last_error;
thread_local std::int64_t g_parse_offset = -1;

class ArgumentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BufferTooSmall : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

meshrt_status fail(meshrt_status s, const char* what) {
  g_last_error = what;
  return s;
}

meshrt_status translate() {
  try {
    throw;
  } catch (const meshrt::ParseError& e) {
    g_parse_offset = static_cast<std::int64_t>(e.offset());
    return fail(MESHRT_ERR_PARSE, e.what());
  } catch (const meshrt::RangeError& e) {
    return fail(MESHRT_ERR_RANGE, e.what());
  } catch (const meshrt::ConfigError& e) {
    return fail(MESHRT_ERR_CONFIG, e.what());
  } catch (const meshrt::ShapeError& e) {
    return fail(MESHRT_ERR_SHAPE, e.what());
  } catch (const meshrt::DataError& e) {
    return fail(MESHRT_ERR_DATA, e.what());
  } catch (const meshrt::NumericalError& e) {
    return fail(MESHRT_ERR_NUMERICAL, e.what());
  } catch (const meshrt::DegenerateInputError& e) {
    return fail(MESHRT_ERR_DEGENERATE, e.what());
  } catch (const meshrt::StateError& e) {
    return fail(MESHRT_ERR_STATE, e.what());
  } catch (const meshrt::IoError& e) {
    return fail(MESHRT_ERR_IO, e.what());
  } catch (const ArgumentError& e) {
    return fail(MESHRT_ERR_ARGUMENT, e.what());
  } catch (const BufferTooSmall& e) {
    return fail(MESHRT_ERR_BUFFER_TOO_SMALL, e.what());
  } catch (const std::exception& e) {
    return fail(MESHRT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(MESHRT_ERR_INTERNAL, "unknown exception");
  }
}

template <class F>
meshrt_status guard(F&& f) {
  g_last_error.clear();
  g_parse_offset = -1;
  try {
    f();
    return MESHRT_OK;
  } catch (...) {
    return translate();
  }
}

void need(const void* p, const char* name) {
  if (!p) throw ArgumentError(std::string(name) + " must not be null");
}

void copy_out(const std::string& s, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf || cap < s.size() + 1) throw BufferTooSmall("output buffer needs " + std::to_string(s.size() + 1) + " bytes");
  std::memcpy(buf, s.c_str(), s.size() + 1);
}

meshrt::LogFn line_sink(meshrt_line_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

meshrt::LayerPlan plan_from(const meshrt_plan_info& p) {
  return meshrt::LayerPlan{p.l_pre, p.l_core, p.n_loop, p.l_coda, p.recursive != 0};
}

}  // namespace

extern "C" {

const char* meshrt_version(void) { return "0.1.0"; }

const char* meshrt_status_name(meshrt_status s) {
  switch (s) {
    case MESHRT_OK: return "ok";
    case MESHRT_ERR_ARGUMENT: return "argument";
    case MESHRT_ERR_PARSE: return "parse";
    case MESHRT_ERR_RANGE: return "range";
    case MESHRT_ERR_CONFIG: return "config";
    case MESHRT_ERR_SHAPE: return "shape";
    case MESHRT_ERR_DATA: return "data";
    case MESHRT_ERR_NUMERICAL: return "numerical";
    case MESHRT_ERR_DEGENERATE: return "degenerate";
    case MESHRT_ERR_STATE: return "state";
    case MESHRT_ERR_IO: return "io";
    case MESHRT_ERR_BUFFER_TOO_SMALL: return "buffer_too_small";
    case MESHRT_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* meshrt_last_error(void) { return g_last_error.c_str(); }

int64_t meshrt_last_parse_offset(void) { return g_parse_offset; }

meshrt_status meshrt_plan_parse(const char* text, meshrt_plan_info* out) {
  return guard([&] {
    need(text, "text");
    need(out, "out");
    const meshrt::LayerPlan p = meshrt::parse_plan(text);
    *out = meshrt_plan_info{p.l_pre, p.l_core, p.n_loop, p.l_coda, p.recursive ? 1 : 0, p.n_compute(),
                            p.unique_layers()};
  });
}

meshrt_status meshrt_plan_format(const meshrt_plan_info* plan, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    need(plan, "plan");
    copy_out(meshrt::format_plan(plan_from(*plan)), buf, cap, needed);
  });
}

meshrt_status meshrt_param_reduction(const char* plan, double* percent) {
  return guard([&] {
    need(plan, "plan");
    need(percent, "percent");
    *percent = meshrt::param_reduction(meshrt::parse_plan(plan));
  });
}

meshrt_status meshrt_router_param_count(const char* plan, int64_t d_model, int64_t slots, int with_bias,
                                        int64_t* count) {
  return guard([&] {
    need(plan, "plan");
    need(count, "count");
    *count = meshrt::router_param_count(meshrt::parse_plan(plan), d_model, slots, with_bias != 0);
  });
}

meshrt_status meshrt_default_buffer_len(int n_loop, int* slots) {
  return guard([&] {
    need(slots, "slots");
    *slots = meshrt::default_buffer_len(n_loop);
  });
}

meshrt_status meshrt_config_new(meshrt_config** out) {
  return guard([&] {
    need(out, "out");
    *out = new meshrt_config{};
  });
}

meshrt_status meshrt_config_parse(const char* text, meshrt_config** out) {
  return guard([&] {
    need(text, "text");
    need(out, "out");
    *out = new meshrt_config{meshrt::parse_run_config(text)};
  });
}

meshrt_status meshrt_config_load(const char* path, meshrt_config** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new meshrt_config{meshrt::load_run_config(path)};
  });
}

meshrt_status meshrt_config_set(meshrt_config* cfg, const char* key, const char* value) {
  return guard([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    meshrt::set_run_key(cfg->cfg, key, value);
  });
}

meshrt_status meshrt_config_get(const meshrt_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    need(cfg, "cfg");
    need(key, "key");
    copy_out(meshrt::get_run_key(cfg->cfg, key), buf, cap, needed);
  });
}

meshrt_status meshrt_config_format(const meshrt_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guard([&] {
    need(cfg, "cfg");
    copy_out(meshrt::format_run_config(cfg->cfg), buf, cap, needed);
  });
}

meshrt_status meshrt_config_apply_env(meshrt_config* cfg) {
  return guard([&] {
    need(cfg, "cfg");
    meshrt::apply_env_overrides(cfg->cfg);
  });
}

void meshrt_config_free(meshrt_config* cfg) { delete cfg; }

meshrt_status meshrt_train(const meshrt_config* cfg, const char* out_dir, meshrt_line_fn log, void* user,
                           double* final_loss) {
  return guard([&] {
    need(cfg, "cfg");
    need(out_dir, "out_dir");
    const meshrt::RunOutcome r = meshrt::run_training(cfg->cfg, out_dir, line_sink(log, user));
    if (final_loss) *final_loss = r.final_loss;
  });
}

meshrt_status meshrt_probe(const char* checkpoint, const char* dump_dir, int samples, meshrt_line_fn log,
                           void* user) {
  return guard([&] {
    need(checkpoint, "checkpoint");
    need(dump_dir, "dump_dir");
    meshrt::run_probe(checkpoint, dump_dir, samples, line_sink(log, user));
  });
}

meshrt_status meshrt_report(const char* dump_dir, const char* metric, const char* out_dir, double theta, int top_k,
                            meshrt_line_fn log, void* user) {
  return guard([&] {
    need(dump_dir, "dump_dir");
    need(metric, "metric");
    need(out_dir, "out_dir");
    meshrt::run_report(dump_dir, metric, out_dir, theta, top_k, line_sink(log, user));
  });
}

meshrt_status meshrt_ablate_buffer(const meshrt_config* cfg, const char* out_dir, int k_min, int k_max,
                                   meshrt_line_fn log, void* user) {
  return guard([&] {
    need(cfg, "cfg");
    need(out_dir, "out_dir");
    meshrt::run_ablate_buffer(cfg->cfg, out_dir, k_min, k_max, line_sink(log, user));
  });
}

meshrt_status meshrt_selftest(meshrt_line_fn log, void* user, int* failures) {
  return guard([&] {
    const int n = meshrt::run_selftest([&](const meshrt::CheckResult& r) {
      if (!log) return;
      const std::string line = std::string(r.passed ? "PASS " : "FAIL ") + r.name + ": " + r.detail;
      log(line.c_str(), user);
    });
    if (failures) *failures = n;
  });
}

meshrt_status meshrt_model_load(const char* checkpoint, meshrt_model** out) {
  return guard([&] {
    need(checkpoint, "checkpoint");
    need(out, "out");
    const meshrt::CheckpointInfo info = meshrt::read_checkpoint_info(checkpoint);
    if (info.config.dtype == meshrt::Dtype::F64)
      *out = new meshrt_model{meshrt::load_checkpoint<double>(checkpoint)};
    else
      *out = new meshrt_model{meshrt::load_checkpoint<float>(checkpoint)};
  });
}

meshrt_status meshrt_model_vocab(const meshrt_model* model, int* vocab) {
  return guard([&] {
    need(model, "model");
    need(vocab, "vocab");
    *vocab = std::visit([](const auto& m) { return m.config.vocab; }, model->model);
  });
}

meshrt_status meshrt_model_forward(const meshrt_model* model, const int32_t* tokens, size_t n_seq, size_t seq_len,
                                   double* logits, size_t logits_cap) {
  return guard([&] {
    need(model, "model");
    need(tokens, "tokens");
    need(logits, "logits");
    const std::span<const std::int32_t> toks(tokens, n_seq * seq_len);
    std::visit(
        [&](const auto& m) {
          const auto out = meshrt::forward_logits(m, toks, seq_len);
          if (logits_cap < out.numel())
            throw BufferTooSmall("logits buffer needs " + std::to_string(out.numel()) + " values");
          for (std::size_t i = 0; i < out.numel(); ++i) logits[i] = static_cast<double>(out[i]);
        },
        model->model);
  });
}

void meshrt_model_free(meshrt_model* model) { delete model; }

}  // extern "C"
