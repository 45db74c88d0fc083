#include "meshrt/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace meshrt {

using nlohmann::json;

template <class T>
double effort(const Tensor<T>& input, const Tensor<T>& output) {
  if (input.shape() != output.shape())
    throw ShapeError("effort: input " + shape_str(input.shape()) + " vs output " + shape_str(output.shape()));
  double diff = 0.0, a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const double x = input[i], y = output[i];
    diff += (y - x) * (y - x);
    a += y * y;
    b += x * x;
  }
  const double den = std::sqrt(a) + std::sqrt(b);
  if (den == 0.0) throw DataError("effort: input and output are both zero");
  return 2.0 * std::sqrt(diff) / den;
}

namespace {

// Squared row distances and the median (unsquared) over i < j.
std::vector<double> sq_distances(const Tensor<double>& x, double& median) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> d2(n * n, 0.0);
  std::vector<double> upper;
  upper.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = x(i, k) - x(j, k);
        s += t * t;
      }
      d2[i * n + j] = d2[j * n + i] = s;
      upper.push_back(std::sqrt(s));
    }
  const std::size_t m = upper.size();
  std::nth_element(upper.begin(), upper.begin() + m / 2, upper.end());
  median = upper[m / 2];
  if (m % 2 == 0) {
    const double lo = *std::max_element(upper.begin(), upper.begin() + m / 2);
    median = 0.5 * (lo + median);
  }
  return d2;
}

// Doubly centred RBF Gram matrix.
std::vector<double> centred_rbf(const Tensor<double>& x, double theta, const char* which) {
  const std::size_t n = x.rows();
  double median = 0.0;
  std::vector<double> k = sq_distances(x, median);
  if (median == 0.0)
    throw DegenerateInputError(std::string("cka_rbf: median pairwise distance of ") + which + " is zero");
  const double sigma = theta * median;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (double& v : k) v = std::exp(-v * inv);
  std::vector<double> row_mean(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row_mean[i] += k[i * n + j];
    total += row_mean[i];
    row_mean[i] /= static_cast<double>(n);
  }
  total /= static_cast<double>(n * n);
  // K symmetric, so column means equal row means.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) k[i * n + j] += total - row_mean[i] - row_mean[j];
  return k;
}

double frob_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

template <class T>
double cka_rbf(const Tensor<T>& x, const Tensor<T>& y, double theta) {
  if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows())
    throw ShapeError("cka_rbf: inputs need equal row counts, got " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  if (x.rows() < 3) throw ShapeError("cka_rbf: need at least 3 rows");
  if (!(theta > 0.0) || !std::isfinite(theta)) throw RangeError("cka_rbf: theta must be positive");
  const std::vector<double> kx = centred_rbf(x.template cast<double>(), theta, "x");
  const std::vector<double> ky = centred_rbf(y.template cast<double>(), theta, "y");
  const double xy = frob_dot(kx, ky), xx = frob_dot(kx, kx), yy = frob_dot(ky, ky);
  if (xx <= 0.0 || yy <= 0.0) throw DegenerateInputError("cka_rbf: centred kernel vanished");
  return xy / std::sqrt(xx * yy);
}

template <class T>
std::vector<double> spectrum(const Tensor<T>& x, std::size_t top_k) {
  if (x.rank() != 2) throw ShapeError("spectrum: expected a matrix");
  const std::size_t k = std::min({x.rows(), x.cols(), top_k});
  if (k == 0) throw ShapeError("spectrum: empty input");
  std::vector<double> s = singular_values(x, k);
  if (!(s[0] > 0.0)) throw DegenerateInputError("spectrum: matrix is zero");
  const double s0 = s[0];
  for (double& v : s) v /= s0;
  return s;
}

// ---------------------------------------------------------------------------

template <class T>
std::vector<StageList> split_trace(const StateTrace<T>& trace, std::size_t seq_len) {
  std::vector<std::pair<std::string, const Tensor<T>*>> all;
  for (std::size_t i = 0; i < trace.size(); ++i) all.emplace_back(trace.stage_names()[i], &trace.stage(i));
  for (const auto& b : trace.blocks()) {
    all.emplace_back(b.block + ".input", &trace.block_tensor(b.input));
    all.emplace_back(b.block + ".output", &trace.block_tensor(b.output));
  }
  if (all.empty()) return {};
  const std::size_t rows = all.front().second->rows();
  if (seq_len == 0 || rows % seq_len != 0) throw ShapeError("split_trace: rows are not whole sequences");
  const std::size_t n = rows / seq_len;
  std::vector<StageList> out(n);
  for (const auto& [name, t] : all) {
    if (t->rows() != rows) throw ShapeError("split_trace: stage '" + name + "' has a different row count");
    const std::size_t d = t->cols();
    for (std::size_t s = 0; s < n; ++s) {
      Tensor<double> part({seq_len, d});
      for (std::size_t i = 0; i < seq_len; ++i)
        for (std::size_t j = 0; j < d; ++j) part(i, j) = static_cast<double>((*t)(s * seq_len + i, j));
      out[s].emplace_back(name, std::move(part));
    }
  }
  return out;
}

std::pair<int, std::string> stage_order_key(const std::string& s) {
  if (s == "h_emb") return {0, ""};
  if (s == "h_out") return {1 << 20, ""};
  if (s.size() > 1 && s[0] == 'h' && std::all_of(s.begin() + 1, s.end(), ::isdigit))
    return {1 + std::stoi(s.substr(1)), ""};
  // Block pairs: f_pre, f_core<t>, f_coda.
  const std::string base = s.substr(0, s.find('.'));
  int rank = 1 << 22;
  if (base == "f_pre") rank = (1 << 21);
  else if (base.rfind("f_core", 0) == 0 && base.size() > 6) rank = (1 << 21) + 1 + std::stoi(base.substr(6));
  else if (base == "f_coda") rank = (1 << 21) + (1 << 20);
  return {rank, s};
}

namespace {

bool by_stage_order(const std::pair<std::string, Tensor<double>>& a, const std::pair<std::string, Tensor<double>>& b) {
  return stage_order_key(a.first) < stage_order_key(b.first);
}

std::string sample_dir_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", id);
  return buf;
}

bool is_main_stage(const std::string& s) { return s.find('.') == std::string::npos; }

}  // namespace

void write_sample(const std::filesystem::path& dir, int sample_id, const StageList& stages,
                  const std::string& config_hash) {
  namespace fs = std::filesystem;
  const fs::path sdir = dir / sample_dir_name(sample_id);
  std::error_code ec;
  fs::create_directories(sdir, ec);
  if (ec) throw IoError("cannot create '" + sdir.string() + "': " + ec.message());
  for (const auto& [name, t] : stages) {
    std::vector<float> buf(t.numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(t[i]);
    std::ofstream bin(sdir / (name + ".bin"), std::ios::binary | std::ios::trunc);
    bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!bin) throw IoError("write failed for stage '" + name + "' of sample " + std::to_string(sample_id));
    const json side = {{"stage", name},
                       {"shape", t.shape()},
                       {"dtype", "f32"},
                       {"sample_id", sample_id},
                       {"config_hash", config_hash}};
    std::ofstream js(sdir / (name + ".json"), std::ios::trunc);
    js << side.dump(2) << "\n";
    if (!js) throw IoError("write failed for sidecar '" + name + "'");
  }
}

DumpSet load_dump(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("dump directory '" + dir.string() + "' does not exist");
  DumpSet set;
  std::vector<fs::path> sample_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) sample_dirs.push_back(e.path());
  std::sort(sample_dirs.begin(), sample_dirs.end());
  bool first = true;
  for (const auto& sdir : sample_dirs) {
    DumpSample sample;
    bool have_id = false;
    std::vector<fs::path> sidecars;
    for (const auto& e : fs::directory_iterator(sdir))
      if (e.path().extension() == ".json") sidecars.push_back(e.path());
    std::sort(sidecars.begin(), sidecars.end());
    for (const auto& sc : sidecars) {
      json side;
      try {
        std::ifstream in(sc);
        side = json::parse(in);
      } catch (const json::exception& e) {
        throw DataError("sidecar '" + sc.string() + "' is not valid JSON: " + e.what());
      }
      const std::string stage = side.value("stage", "");
      const Shape shape = side.value("shape", Shape{});
      const int id = side.value("sample_id", -1);
      const std::string hash = side.value("config_hash", "");
      if (stage.empty() || shape.size() != 2 || side.value("dtype", "") != "f32")
        throw DataError("sidecar '" + sc.string() + "' is malformed");
      const fs::path bin = sc.parent_path() / (stage + ".bin");
      std::error_code ec;
      const auto bytes = fs::file_size(bin, ec);
      if (ec) throw DataError("missing tensor file for stage '" + stage + "' in " + sdir.string());
      if (bytes != shape_numel(shape) * sizeof(float))
        throw DataError("stage '" + stage + "' in " + sdir.string() + ": sidecar shape " + shape_str(shape) +
                        " does not match " + std::to_string(bytes) + " bytes");
      if (have_id && id != sample.id) throw DataError("mixed sample ids inside " + sdir.string());
      sample.id = id;
      have_id = true;
      if (set.config_hash.empty()) set.config_hash = hash;
      else if (hash != set.config_hash) throw DataError("dump mixes config hashes");
      std::vector<float> buf(shape_numel(shape));
      std::ifstream in(bin, std::ios::binary);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
      if (!in) throw IoError("cannot read '" + bin.string() + "'");
      sample.stages.emplace_back(stage, Tensor<double>(shape, std::vector<double>(buf.begin(), buf.end())));
    }
    if (sample.stages.empty()) continue;
    std::sort(sample.stages.begin(), sample.stages.end(), by_stage_order);
    if (!first) {
      const auto& ref = set.samples.front().stages;
      if (ref.size() != sample.stages.size()) throw DataError("sample " + std::to_string(sample.id) + " has a different stage set");
      for (std::size_t i = 0; i < ref.size(); ++i)
        if (ref[i].first != sample.stages[i].first || ref[i].second.shape() != sample.stages[i].second.shape())
          throw DataError("sample " + std::to_string(sample.id) + " disagrees on stage '" + ref[i].first + "'");
    }
    first = false;
    set.samples.push_back(std::move(sample));
  }
  if (set.samples.empty()) throw DataError("dump directory '" + dir.string() + "' holds no samples");
  std::sort(set.samples.begin(), set.samples.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return set;
}

// ---------------------------------------------------------------------------

MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) throw DataError("mean_std: no values");
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - mean) * (x - mean);
  return {mean, std::sqrt(v / static_cast<double>(xs.size()))};
}

namespace {

const Tensor<double>& find_stage(const DumpSample& s, const std::string& name) {
  for (const auto& [n, t] : s.stages)
    if (n == name) return t;
  throw DataError("sample " + std::to_string(s.id) + " lacks stage '" + name + "'");
}

}  // namespace

std::vector<EffortRow> aggregate_effort(const DumpSet& dump) {
  std::vector<std::string> blocks;
  for (const auto& [name, t] : dump.samples.at(0).stages) {
    const auto dot = name.rfind(".input");
    if (dot != std::string::npos && dot + 6 == name.size()) blocks.push_back(name.substr(0, dot));
  }
  std::vector<EffortRow> rows;
  for (const auto& b : blocks) {
    std::vector<double> xs;
    for (const auto& s : dump.samples) xs.push_back(effort(find_stage(s, b + ".input"), find_stage(s, b + ".output")));
    const MeanStd m = mean_std(xs);
    rows.push_back({b, m.mean, m.std});
  }
  return rows;
}

std::vector<CkaRow> aggregate_cka(const DumpSet& dump, double theta) {
  std::vector<std::string> stages;
  for (const auto& [name, t] : dump.samples.at(0).stages)
    if (is_main_stage(name)) stages.push_back(name);
  const std::size_t n = stages.size();
  std::vector<std::vector<double>> sums(n, std::vector<double>(n, 0.0));
  for (const auto& s : dump.samples)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        const double v = i == j ? 1.0 : cka_rbf(find_stage(s, stages[i]), find_stage(s, stages[j]), theta);
        sums[i][j] += v;
      }
  std::vector<CkaRow> rows;
  const double cnt = static_cast<double>(dump.samples.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = i <= j ? sums[i][j] : sums[j][i];
      rows.push_back({stages[i], stages[j], v / cnt});
    }
  return rows;
}

std::vector<SpectrumRow> aggregate_spectrum(const DumpSet& dump, std::size_t top_k) {
  std::vector<SpectrumRow> rows;
  for (const auto& [name, t0] : dump.samples.at(0).stages) {
    if (!is_main_stage(name)) continue;
    std::vector<std::vector<double>> per_sample;
    for (const auto& s : dump.samples) per_sample.push_back(spectrum(find_stage(s, name), top_k));
    for (std::size_t i = 0; i < per_sample[0].size(); ++i) {
      std::vector<double> xs;
      for (const auto& v : per_sample) xs.push_back(v[i]);
      const MeanStd m = mean_std(xs);
      rows.push_back({name, static_cast<int>(i), m.mean, m.std});
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write '" + file.string() + "'");
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

// JSON mirror with numbers emitted at full precision.
std::string json_rows(const std::vector<std::vector<std::pair<std::string, std::string>>>& rows) {
  std::string out = "[\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += "  {";
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      if (i) out += ", ";
      out += "\"" + rows[r][i].first + "\": " + rows[r][i].second;
    }
    out += r + 1 < rows.size() ? "},\n" : "}\n";
  }
  return out + "]\n";
}

std::string quoted(const std::string& s) { return json(s).dump(); }

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& file, const std::string& header) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open '" + file.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw DataError("'" + file.string() + "' does not start with header '" + header + "'");
  const std::size_t cols = static_cast<std::size_t>(std::count(header.begin(), header.end(), ',')) + 1;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != cols) throw DataError("'" + file.string() + "': row has " + std::to_string(f.size()) + " fields");
    rows.push_back(std::move(f));
  }
  return rows;
}

double to_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DataError("not a number: '" + s + "'");
  return v;
}

}  // namespace

void write_effort(const std::filesystem::path& dir, const std::vector<EffortRow>& rows) {
  ensure_dir(dir);
  std::string csv = "block,mean,std\n";
  std::vector<std::vector<std::pair<std::string, std::string>>> js;
  for (const auto& r : rows) {
    csv += r.block + "," + num(r.mean) + "," + num(r.std) + "\n";
    js.push_back({{"block", quoted(r.block)}, {"mean", num(r.mean)}, {"std", num(r.std)}});
  }
  write_text(dir / "effort.csv", csv);
  write_text(dir / "effort.json", json_rows(js));
}

void write_cka(const std::filesystem::path& dir, const std::vector<CkaRow>& rows) {
  ensure_dir(dir);
  std::string csv = "stage_a,stage_b,mean\n";
  std::vector<std::vector<std::pair<std::string, std::string>>> js;
  for (const auto& r : rows) {
    csv += r.stage_a + "," + r.stage_b + "," + num(r.mean) + "\n";
    js.push_back({{"stage_a", quoted(r.stage_a)}, {"stage_b", quoted(r.stage_b)}, {"mean", num(r.mean)}});
  }
  write_text(dir / "cka.csv", csv);
  write_text(dir / "cka.json", json_rows(js));
}

void write_spectrum(const std::filesystem::path& dir, const std::vector<SpectrumRow>& rows) {
  ensure_dir(dir);
  std::string csv = "stage,index,mean,std\n";
  std::vector<std::vector<std::pair<std::string, std::string>>> js;
  for (const auto& r : rows) {
    csv += r.stage + "," + std::to_string(r.index) + "," + num(r.mean) + "," + num(r.std) + "\n";
    js.push_back({{"stage", quoted(r.stage)},
                  {"index", std::to_string(r.index)},
                  {"mean", num(r.mean)},
                  {"std", num(r.std)}});
  }
  write_text(dir / "spectrum.csv", csv);
  write_text(dir / "spectrum.json", json_rows(js));
}

std::vector<EffortRow> read_effort_csv(const std::filesystem::path& file) {
  std::vector<EffortRow> out;
  for (const auto& f : read_csv(file, "block,mean,std")) out.push_back({f[0], to_double(f[1]), to_double(f[2])});
  return out;
}

std::vector<CkaRow> read_cka_csv(const std::filesystem::path& file) {
  std::vector<CkaRow> out;
  for (const auto& f : read_csv(file, "stage_a,stage_b,mean")) out.push_back({f[0], f[1], to_double(f[2])});
  return out;
}

std::vector<SpectrumRow> read_spectrum_csv(const std::filesystem::path& file) {
  std::vector<SpectrumRow> out;
  for (const auto& f : read_csv(file, "stage,index,mean,std"))
    out.push_back({f[0], static_cast<int>(to_double(f[1])), to_double(f[2]), to_double(f[3])});
  return out;
}

bool operator==(const EffortRow& a, const EffortRow& b) {
  return a.block == b.block && a.mean == b.mean && a.std == b.std;
}
bool operator==(const CkaRow& a, const CkaRow& b) {
  return a.stage_a == b.stage_a && a.stage_b == b.stage_b && a.mean == b.mean;
}
bool operator==(const SpectrumRow& a, const SpectrumRow& b) {
  return a.stage == b.stage && a.index == b.index && a.mean == b.mean && a.std == b.std;
}

template double effort(const Tensor<float>&, const Tensor<float>&);
template double effort(const Tensor<double>&, const Tensor<double>&);
template double cka_rbf(const Tensor<float>&, const Tensor<float>&, double);
template double cka_rbf(const Tensor<double>&, const Tensor<double>&, double);
template std::vector<double> spectrum(const Tensor<float>&, std::size_t);
template std::vector<double> spectrum(const Tensor<double>&, std::size_t);
template std::vector<StageList> split_trace(const StateTrace<float>&, std::size_t);
template std::vector<StageList> split_trace(const StateTrace<double>&, std::size_t);

}  // namespace meshrt
