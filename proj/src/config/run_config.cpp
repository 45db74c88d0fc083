#include "meshrt/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace meshrt {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
}

int to_int32(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < -2147483647LL || x > 2147483647LL) throw ConfigError("'" + key + "' is out of range");
  return static_cast<int>(x);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  const long long x = to_int(key, v);
  if (x < 0) throw ConfigError("'" + key + "' must be non-negative");
  return static_cast<std::size_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string g(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

const char* data_kind_name(DataKind k) {
  switch (k) {
    case DataKind::Synthetic: return "synthetic";
    case DataKind::Corpus: return "corpus";
    case DataKind::Needle: return "needle";
  }
  return "?";
}

}  // namespace

void set_run_key(RunConfig& c, const std::string& key, const std::string& v) {
  if (key == "seed") {
    const long long s = to_int(key, v);
    if (s < 0) throw ConfigError("'seed' must be non-negative");
    c.model.seed = c.train.seed = static_cast<std::uint64_t>(s);
    return;
  }
  bool used = false;
  apply_kv(c.model, key, v, &used);
  if (used) {
    if (key == "vocab") c.vocab_explicit = true;
    return;
  }
  TrainConfig& t = c.train;
  if (key == "lr") t.peak_lr = to_real(key, v);
  else if (key == "beta1") t.beta1 = to_real(key, v);
  else if (key == "beta2") t.beta2 = to_real(key, v);
  else if (key == "adam_eps") t.eps = to_real(key, v);
  else if (key == "weight_decay") t.weight_decay = to_real(key, v);
  else if (key == "warmup_frac") t.warmup_frac = to_real(key, v);
  else if (key == "final_lr_frac") t.final_lr_frac = to_real(key, v);
  else if (key == "clip_norm") t.clip_norm = to_real(key, v);
  else if (key == "steps") t.steps = to_int32(key, v);
  else if (key == "batch") t.batch = to_int32(key, v);
  else if (key == "seq_len") t.seq_len = to_int32(key, v);
  else if (key == "eval_every") t.eval_every = to_int32(key, v);
  else if (key == "checkpoint_every") t.checkpoint_every = to_int32(key, v);
  else if (key == "single_epoch") t.single_epoch = to_bool(key, v);
  else if (key == "data") {
    if (v == "synthetic") c.data.kind = DataKind::Synthetic;
    else if (v == "corpus") c.data.kind = DataKind::Corpus;
    else if (v == "needle") c.data.kind = DataKind::Needle;
    else throw ConfigError("unknown data source '" + v + "' (expected synthetic, corpus or needle)");
  } else if (key == "corpus_path") c.data.corpus_path = v;
  else if (key == "corpus_bytes") c.data.corpus_bytes = to_size(key, v);
  else if (key == "needle_filler") c.data.needle.filler = to_int32(key, v);
  else if (key == "needle_payload") c.data.needle.payload = to_int32(key, v);
  else if (key == "needle_distance") c.data.needle_distance = to_size(key, v);
  else if (key == "probe_samples") c.probe.samples = to_int32(key, v);
  else if (key == "cka_theta") c.probe.theta = to_real(key, v);
  else if (key == "spectrum_top_k") c.probe.top_k = to_int32(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::string get_run_key(const RunConfig& c, const std::string& key) {
  if (key == "seed") return std::to_string(c.model.seed);
  const auto kv = to_kv(c.model);
  if (auto it = kv.find(key); it != kv.end()) return it->second;
  const TrainConfig& t = c.train;
  if (key == "lr") return g(t.peak_lr);
  if (key == "beta1") return g(t.beta1);
  if (key == "beta2") return g(t.beta2);
  if (key == "adam_eps") return g(t.eps);
  if (key == "weight_decay") return g(t.weight_decay);
  if (key == "warmup_frac") return g(t.warmup_frac);
  if (key == "final_lr_frac") return g(t.final_lr_frac);
  if (key == "clip_norm") return g(t.clip_norm);
  if (key == "steps") return std::to_string(t.steps);
  if (key == "batch") return std::to_string(t.batch);
  if (key == "seq_len") return std::to_string(t.seq_len);
  if (key == "eval_every") return std::to_string(t.eval_every);
  if (key == "checkpoint_every") return std::to_string(t.checkpoint_every);
  if (key == "single_epoch") return t.single_epoch ? "true" : "false";
  if (key == "data") return data_kind_name(c.data.kind);
  if (key == "corpus_path") return c.data.corpus_path;
  if (key == "corpus_bytes") return std::to_string(c.data.corpus_bytes);
  if (key == "needle_filler") return std::to_string(c.data.needle.filler);
  if (key == "needle_payload") return std::to_string(c.data.needle.payload);
  if (key == "needle_distance") return std::to_string(c.data.needle_distance);
  if (key == "probe_samples") return std::to_string(c.probe.samples);
  if (key == "cka_theta") return g(c.probe.theta);
  if (key == "spectrum_top_k") return std::to_string(c.probe.top_k);
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::size_t offset = 0;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_start);
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line_start);
    const std::size_t value_at = line_start + line.find_first_not_of(" \t", line.find('=') + 1);
    try {
      set_run_key(c, key, value);
    } catch (const ParseError& e) {
      throw ParseError("malformed value for '" + key + "'", value_at + e.offset());
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string format_run_config(const RunConfig& c) {
  static const char* keys[] = {"plan",         "scheme",        "buffer",         "share_core",      "d_model",
                               "n_heads",      "d_ff",          "vocab",          "max_seq",         "dtype",
                               "seed",         "lr",            "beta1",          "beta2",           "adam_eps",
                               "weight_decay", "warmup_frac",   "final_lr_frac",  "clip_norm",       "steps",
                               "batch",        "seq_len",       "eval_every",     "checkpoint_every", "single_epoch",
                               "data",         "corpus_path",   "corpus_bytes",   "needle_filler",   "needle_payload",
                               "needle_distance", "probe_samples", "cka_theta",   "spectrum_top_k"};
  std::string out;
  for (const char* k : keys) out += std::string(k) + " = " + get_run_key(c, k) + "\n";
  return out;
}

void apply_env_overrides(RunConfig& c) {
  if (const char* s = std::getenv("MESH_SEED"); s && *s) set_run_key(c, "seed", s);
}

std::unique_ptr<DataSource> make_data_source(const RunConfig& c) {
  switch (c.data.kind) {
    case DataKind::Synthetic:
      return std::make_unique<CorpusSource>(synthetic_corpus(c.data.corpus_bytes, 0), c.train.single_epoch);
    case DataKind::Corpus:
      if (c.data.corpus_path.empty()) throw ConfigError("data = corpus needs corpus_path");
      return std::make_unique<CorpusSource>(CorpusSource::from_file(c.data.corpus_path, c.train.single_epoch));
    case DataKind::Needle:
      return std::make_unique<NeedleSource>(c.data.needle, c.data.needle_distance, c.train.seed);
  }
  throw ConfigError("unknown data source");
}

ModelConfig resolved_model_config(const RunConfig& c, const DataSource& data) {
  ModelConfig m = c.model;
  if (!c.vocab_explicit) m.vocab = data.vocab();
  if (m.max_seq < c.train.seq_len) m.max_seq = c.train.seq_len;
  return m;
}

}  // namespace meshrt
