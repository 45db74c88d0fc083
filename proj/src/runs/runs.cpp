#include "meshrt/runs.hpp"

#include <cstdio>
#include <fstream>
#include <regex>

#include "json.hpp"
#include "meshrt/checkpoint.hpp"
#include "meshrt/diagnostics.hpp"
#include "meshrt/errors.hpp"

namespace meshrt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;
constexpr std::size_t kProbeChunk = 8;

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + file.string() + "'");
  out << text;
  if (!out.flush()) throw IoError("write to '" + file.string() + "' failed");
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
RunOutcome train_typed(const RunConfig& cfg, const ModelConfig& mc, DataSource& data, const fs::path& out,
                       const std::string& run_json, const LogFn& log) {
  Model<T> model = init_model<T>(mc);
  if (log) {
    log("model " + format_plan(mc.plan) + " scheme " + to_string(mc.scheme.kind) + " params " +
        std::to_string(model.params.numel()) + " data " + data.describe());
  }
  TrainResult tr = train(model, cfg.train, data, out, run_json, log);
  RunOutcome r;
  r.model = mc;
  r.losses = std::move(tr.losses);
  const std::size_t tail = std::max<std::size_t>(1, r.losses.size() / 20);
  for (std::size_t i = r.losses.size() - tail; i < r.losses.size(); ++i) r.final_loss += r.losses[i];
  r.final_loss /= static_cast<double>(tail);
  r.needle_accuracy = std::move(tr.needle_accuracy);
  r.checkpoint = tr.final_checkpoint;
  return r;
}

template <class T>
void probe_typed(const fs::path& checkpoint, const RunConfig& cfg, const fs::path& dump_dir, int samples,
                 const LogFn& log) {
  const Model<T> model = load_checkpoint<T>(checkpoint);
  const auto seq_len = static_cast<std::size_t>(cfg.train.seq_len);
  const std::vector<std::int32_t> tokens = probe_tokens(cfg, samples);
  const std::string hash = config_hash(model.config);
  int id = 0;
  for (std::size_t first = 0; first < static_cast<std::size_t>(samples); first += kProbeChunk) {
    const std::size_t n = std::min(kProbeChunk, static_cast<std::size_t>(samples) - first);
    const std::span<const std::int32_t> chunk(tokens.data() + first * seq_len, n * seq_len);
    StateTrace<T> trace;
    forward_logits(model, chunk, seq_len, &trace);
    for (const StageList& s : split_trace(trace, seq_len)) write_sample(dump_dir, id++, s, hash);
  }
  if (log) log("probe wrote " + std::to_string(id) + " samples to " + dump_dir.string());
}

void clear_dump(const fs::path& dir) {
  if (!fs::exists(dir)) return;
  static const std::regex sample_dir("[0-9]{5}");
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && std::regex_match(e.path().filename().string(), sample_dir)) fs::remove_all(e.path());
  }
}

}  // namespace

RunOutcome run_training(const RunConfig& cfg_in, const fs::path& out, const LogFn& log) {
  RunConfig cfg = cfg_in;
  std::unique_ptr<DataSource> data = make_data_source(cfg);
  cfg.model = validate(resolved_model_config(cfg, *data));
  cfg.vocab_explicit = true;

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
  const std::string text = format_run_config(cfg);
  write_text(out / "config.txt", text);
  const std::string run_json = json{{"run_config", text}}.dump();

  if (cfg.model.dtype == Dtype::F64) return train_typed<double>(cfg, cfg.model, *data, out, run_json, log);
  return train_typed<float>(cfg, cfg.model, *data, out, run_json, log);
}

RunConfig checkpoint_run_config(const fs::path& checkpoint) {
  const CheckpointInfo info = read_checkpoint_info(checkpoint);
  const json run = json::parse(info.run_json);
  if (!run.contains("run_config") || !run["run_config"].is_string())
    throw DataError("checkpoint '" + checkpoint.string() + "' carries no run config");
  RunConfig cfg = parse_run_config(run["run_config"].get<std::string>());
  cfg.model = info.config;
  cfg.vocab_explicit = true;
  return cfg;
}

std::vector<std::int32_t> probe_tokens(const RunConfig& cfg, int samples) {
  if (samples < 1) throw RangeError("probe needs at least one sample");
  const auto seq_len = static_cast<std::size_t>(cfg.train.seq_len);
  std::vector<std::int32_t> tokens;
  tokens.reserve(static_cast<std::size_t>(samples) * seq_len);
  if (cfg.data.kind == DataKind::Needle) {
    NeedleSource src(cfg.data.needle, cfg.data.needle_distance, cfg.train.seed ^ kProbeStream);
    const Batch b = src.next(static_cast<std::size_t>(samples), seq_len);
    return b.tokens;
  }
  const std::unique_ptr<DataSource> data = make_data_source(cfg);
  const auto* corpus = dynamic_cast<const CorpusSource*>(data.get());
  if (!corpus) throw StateError("probe: unsupported data source");
  const std::vector<std::int32_t>& ids = corpus->ids();
  if (ids.size() < seq_len) throw DataError("corpus shorter than one probe sequence");
  Rng rng(cfg.train.seed, kProbeStream);
  for (int i = 0; i < samples; ++i) {
    const std::size_t start = rng.below(ids.size() - seq_len + 1);
    tokens.insert(tokens.end(), ids.begin() + static_cast<std::ptrdiff_t>(start),
                  ids.begin() + static_cast<std::ptrdiff_t>(start + seq_len));
  }
  return tokens;
}

void run_probe(const fs::path& checkpoint, const fs::path& dump_dir, int samples, const LogFn& log) {
  const RunConfig cfg = checkpoint_run_config(checkpoint);
  if (samples <= 0) samples = cfg.probe.samples;
  clear_dump(dump_dir);
  if (cfg.model.dtype == Dtype::F64)
    probe_typed<double>(checkpoint, cfg, dump_dir, samples, log);
  else
    probe_typed<float>(checkpoint, cfg, dump_dir, samples, log);
}

void run_report(const fs::path& dump_dir, const std::string& metric, const fs::path& out_dir, double theta, int top_k,
                const LogFn& log) {
  const bool all = metric == "all";
  if (!all && metric != "effort" && metric != "cka" && metric != "spectrum")
    throw ConfigError("unknown metric '" + metric + "' (effort | cka | spectrum | all)");
  if (top_k < 1) throw RangeError("top_k must be positive");
  const DumpSet dump = load_dump(dump_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
  auto echo = [&](const std::string& line) {
    if (log) log(line);
  };
  if (all || metric == "effort") {
    const auto rows = aggregate_effort(dump);
    write_effort(out_dir, rows);
    echo("block,mean,std");
    for (const auto& r : rows) echo(r.block + "," + g17(r.mean) + "," + g17(r.std));
  }
  if (all || metric == "cka") {
    const auto rows = aggregate_cka(dump, theta);
    write_cka(out_dir, rows);
    echo("stage_a,stage_b,mean");
    for (const auto& r : rows) echo(r.stage_a + "," + r.stage_b + "," + g17(r.mean));
  }
  if (all || metric == "spectrum") {
    const auto rows = aggregate_spectrum(dump, static_cast<std::size_t>(top_k));
    write_spectrum(out_dir, rows);
    echo("stage,index,mean,std");
    for (const auto& r : rows) echo(r.stage + "," + std::to_string(r.index) + "," + g17(r.mean) + "," + g17(r.std));
  }
}

std::vector<AblationRow> run_ablate_buffer(const RunConfig& cfg, const fs::path& out, int k_min, int k_max,
                                           const LogFn& log) {
  if (cfg.model.scheme.kind != SchemeKind::Mesh) throw ConfigError("ablate-buffer needs scheme = mesh");
  if (k_min < 0 || k_max < k_min) throw RangeError("scratchpad range must satisfy 0 <= k_min <= k_max");
  std::vector<AblationRow> rows;
  for (int k = k_min; k <= k_max; ++k) {
    RunConfig c = cfg;
    c.model.scheme.mesh_slots = cfg.model.plan.n_loop + 1 + k;
    if (log) log("ablate k=" + std::to_string(k) + " B=" + std::to_string(c.model.scheme.mesh_slots));
    const RunOutcome r = run_training(c, out / ("k" + std::to_string(k)), log);
    rows.push_back({k, c.model.scheme.mesh_slots, r.final_loss});
  }
  std::string csv = "k,buffer,final_loss\n";
  for (const auto& r : rows) csv += std::to_string(r.k) + "," + std::to_string(r.slots) + "," + g17(r.final_loss) + "\n";
  write_text(out / "ablate_buffer.csv", csv);
  return rows;
}

}  // namespace meshrt
