// Command-line front end over the C API.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meshrt/meshrt.h"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void print_line(const char* line, void*) {
  std::fputs(line, stdout);
  std::fputc('\n', stdout);
  std::fflush(stdout);
}

int report_failure(meshrt_status s) {
  std::fprintf(stderr, "error (%s): %s\n", meshrt_status_name(s), meshrt_last_error());
  return s == MESHRT_ERR_ARGUMENT ? kExitUsage : kExitRuntime;
}

std::string grouped(long long v) {
  std::string digits = std::to_string(v < 0 ? -v : v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return v < 0 ? "-" + out : out;
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_flags(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.path, "Run config file (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", a.overrides, "Override a config key: key=value (repeatable)");
}

// Effective config: defaults, then the file, then --set, then MESH_SEED.
// Returns 0 or an exit code.
int build_config(const ConfigArgs& a, meshrt_config** out) {
  meshrt_status s = a.path.empty() ? meshrt_config_new(out) : meshrt_config_load(a.path.c_str(), out);
  if (s != MESHRT_OK) return report_failure(s);
  for (const std::string& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error (usage): --set expects key=value, got '%s'\n", kv.c_str());
      meshrt_config_free(*out);
      return kExitUsage;
    }
    s = meshrt_config_set(*out, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != MESHRT_OK) break;
  }
  if (s == MESHRT_OK) s = meshrt_config_apply_env(*out);
  if (s != MESHRT_OK) {
    meshrt_config_free(*out);
    return report_failure(s);
  }
  return 0;
}

int cmd_train(const ConfigArgs& a, const std::string& out) {
  meshrt_config* cfg = nullptr;
  if (const int rc = build_config(a, &cfg)) return rc;
  double final_loss = 0.0;
  const meshrt_status s = meshrt_train(cfg, out.c_str(), print_line, nullptr, &final_loss);
  meshrt_config_free(cfg);
  if (s != MESHRT_OK) return report_failure(s);
  std::printf("final_loss %.17g\n", final_loss);
  return 0;
}

int cmd_ablate(const ConfigArgs& a, const std::string& out, int k_min, int k_max) {
  meshrt_config* cfg = nullptr;
  if (const int rc = build_config(a, &cfg)) return rc;
  const meshrt_status s = meshrt_ablate_buffer(cfg, out.c_str(), k_min, k_max, print_line, nullptr);
  meshrt_config_free(cfg);
  if (s != MESHRT_OK) return report_failure(s);
  std::printf("wrote %s/ablate_buffer.csv\n", out.c_str());
  return 0;
}

int cmd_params(const std::string& plan, long long hidden, const std::string& scheme, int buffer, bool no_bias) {
  meshrt_plan_info info{};
  meshrt_status s = meshrt_plan_parse(plan.c_str(), &info);
  if (s != MESHRT_OK) return report_failure(s);
  std::printf("plan %s: %d compute layers, %d unique\n", plan.c_str(), info.n_compute, info.n_unique);
  if (info.recursive) {
    double pct = 0.0;
    s = meshrt_param_reduction(plan.c_str(), &pct);
    if (s != MESHRT_OK) return report_failure(s);
    std::printf("param reduction %.1f%% (%.6f%%)\n", pct, pct);
  }
  if (scheme != "mesh") {
    std::printf("router params 0 (scheme %s has no routers)\n", scheme.c_str());
    return 0;
  }
  if (buffer <= 0) {
    s = meshrt_default_buffer_len(info.n_loop, &buffer);
    if (s != MESHRT_OK) return report_failure(s);
  }
  int64_t with_bias = 0, without_bias = 0;
  s = meshrt_router_param_count(plan.c_str(), hidden, buffer, 1, &with_bias);
  if (s == MESHRT_OK) s = meshrt_router_param_count(plan.c_str(), hidden, buffer, 0, &without_bias);
  if (s != MESHRT_OK) return report_failure(s);
  if (no_bias) {
    std::printf("router params %s (B %d, no bias)\n", grouped(without_bias).c_str(), buffer);
  } else {
    std::printf("router params %s (B %d, with bias; %s without)\n", grouped(with_bias).c_str(), buffer,
                grouped(without_bias).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meshrt: recursive transformer engine with a memory-buffer recurrence"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  std::string train_out;
  auto* train = app.add_subcommand("train", "Train a model from a run config");
  add_config_flags(train, train_args);
  train->add_option("-o,--out", train_out, "Output directory")->required();

  std::string probe_ckpt, probe_out;
  int probe_samples = 0;
  auto* probe = app.add_subcommand("probe", "Capture hidden states of a checkpoint into a dump directory");
  probe->add_option("--checkpoint", probe_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  probe->add_option("-o,--out", probe_out, "Dump directory")->required();
  probe->add_option("-n,--samples", probe_samples, "Number of sequences (default: probe_samples of the run)");

  std::string report_dump, report_metric = "all", report_out;
  double report_theta = 1.0;
  int report_top_k = 50;
  auto* report = app.add_subcommand("report", "Aggregate effort, CKA and spectra over a dump");
  report->add_option("--dump", report_dump, "Dump directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--metric", report_metric, "effort | cka | spectrum | all")
      ->check(CLI::IsMember({"effort", "cka", "spectrum", "all"}));
  report->add_option("-o,--out", report_out, "Report directory (default: the dump directory)");
  report->add_option("--theta", report_theta, "RBF bandwidth multiple of the median distance")
      ->check(CLI::PositiveNumber);
  report->add_option("--top-k", report_top_k, "Singular values kept per stage")->check(CLI::PositiveNumber);

  std::string params_plan, params_scheme = "mesh";
  long long params_hidden = 0;
  int params_buffer = 0;
  bool params_no_bias = false;
  auto* params = app.add_subcommand("params", "Router parameter count and parameter reduction of a plan");
  params->add_option("--plan", params_plan, "Layer plan, e.g. 4+8R2+4")->required();
  params->add_option("--hidden", params_hidden, "Hidden width d_model")->required()->check(CLI::PositiveNumber);
  params->add_option("--scheme", params_scheme, "Recurrence scheme")
      ->check(CLI::IsMember({"base", "residual", "anchor", "anchor_star", "static_comb", "dynamic_comb", "mesh"}));
  params->add_option("--buffer", params_buffer, "Buffer slots B (default n_loop + 3)");
  params->add_flag("--no-bias", params_no_bias, "Report the bias-free count only");

  ConfigArgs ablate_args;
  std::string ablate_out;
  int k_min = 0, k_max = 3;
  auto* ablate = app.add_subcommand("ablate-buffer", "Train across scratchpad slot counts k (B = n_loop + 1 + k)");
  add_config_flags(ablate, ablate_args);
  ablate->add_option("-o,--out", ablate_out, "Output directory")->required();
  ablate->add_option("--k-min", k_min, "Smallest k")->check(CLI::NonNegativeNumber);
  ablate->add_option("--k-max", k_max, "Largest k")->check(CLI::NonNegativeNumber);

  auto* selftest = app.add_subcommand("selftest", "Run the oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (train->parsed()) return cmd_train(train_args, train_out);
  if (probe->parsed()) {
    const meshrt_status s = meshrt_probe(probe_ckpt.c_str(), probe_out.c_str(), probe_samples, print_line, nullptr);
    return s == MESHRT_OK ? 0 : report_failure(s);
  }
  if (report->parsed()) {
    if (report_out.empty()) report_out = report_dump;
    const meshrt_status s = meshrt_report(report_dump.c_str(), report_metric.c_str(), report_out.c_str(),
                                          report_theta, report_top_k, print_line, nullptr);
    return s == MESHRT_OK ? 0 : report_failure(s);
  }
  if (params->parsed()) return cmd_params(params_plan, params_hidden, params_scheme, params_buffer, params_no_bias);
  if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_out, k_min, k_max);
  if (selftest->parsed()) {
    int failures = 0;
    const meshrt_status s = meshrt_selftest(print_line, nullptr, &failures);
    if (s != MESHRT_OK) return report_failure(s);
    std::printf("%d failure(s)\n", failures);
    return failures == 0 ? 0 : kExitRuntime;
  }
  return kExitUsage;
}
