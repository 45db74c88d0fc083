#include "meshrt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace meshrt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

namespace {

json config_json(const ModelConfig& c) {
  json j = json::object();
  for (const auto& [k, v] : to_kv(c)) j[k] = v;
  return j;
}

ModelConfig config_from_json(const json& j) {
  if (!j.is_object()) throw DataError("checkpoint manifest: config is not an object");
  ModelConfig c;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw DataError("checkpoint manifest: config value '" + k + "' is not a string");
    bool used = false;
    apply_kv(c, k, v.get<std::string>(), &used);
    if (!used) throw DataError("checkpoint manifest: unknown config key '" + k + "'");
  }
  return c;
}

struct Header {
  json manifest;
  std::uint64_t data_offset = 0;
};

Header read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("'" + path.string() + "' is not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), 8)) throw DataError("checkpoint truncated in header");
  if (len > (1ULL << 30)) throw DataError("checkpoint manifest length is implausible");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("checkpoint truncated in manifest");
  Header h;
  try {
    h.manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  h.data_offset = 16 + len;
  for (const char* key : {"dtype", "config", "params"})
    if (!h.manifest.contains(key)) throw DataError(std::string("checkpoint manifest lacks '") + key + "'");
  return h;
}

template <class S, class T>
void read_values(std::ifstream& in, Tensor<T>& dst) {
  std::vector<S> buf(dst.numel());
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(S))))
    throw DataError("checkpoint truncated in parameter data");
  for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<T>(buf[i]);
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const std::string& run_json) {
  json run;
  try {
    run = run_json.empty() ? json::object() : json::parse(run_json);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run metadata is not valid JSON: ") + e.what());
  }
  if (!run.is_object()) throw ConfigError("run metadata must be a JSON object");

  json params = json::array();
  for (const auto& p : model.params) params.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  const json manifest = {{"format", 1},
                         {"dtype", to_string(dtype_of<T>())},
                         {"config", config_json(model.config)},
                         {"run", run},
                         {"params", params}};
  const std::string text = manifest.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(kCheckpointMagic, 8);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.params)
      out.write(reinterpret_cast<const char*>(p.value.data().data()),
                static_cast<std::streamsize>(p.value.numel() * sizeof(T)));
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const Header h = read_header(in, path);
  CheckpointInfo info;
  info.config = config_from_json(h.manifest["config"]);
  info.run_json = h.manifest.value("run", json::object()).dump();
  info.param_count = h.manifest["params"].size();
  return info;
}

template <class T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const Header h = read_header(in, path);
  const Dtype stored = parse_dtype(h.manifest["dtype"].get<std::string>());

  ModelConfig cfg = config_from_json(h.manifest["config"]);
  Model<T> model = init_model<T>(cfg);
  const json& params = h.manifest["params"];
  if (!params.is_array() || params.size() != model.params.size())
    throw DataError("checkpoint holds " + std::to_string(params.size()) + " parameters, config implies " +
                    std::to_string(model.params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = model.params[i];
    const std::string name = params[i].value("name", "");
    const Shape shape = params[i].value("shape", Shape{});
    if (name != p.name) throw DataError("checkpoint parameter " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
    if (shape != p.value.shape())
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                      shape_str(p.value.shape()));
    if (stored == Dtype::F32) read_values<float>(in, p.value);
    else read_values<double>(in, p.value);
    check_finite(p.value, "checkpoint parameter");
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw DataError("checkpoint has trailing bytes");
  model.config.dtype = dtype_of<T>();
  return model;
}

template void save_checkpoint(const std::filesystem::path&, const Model<float>&, const std::string&);
template void save_checkpoint(const std::filesystem::path&, const Model<double>&, const std::string&);
template Model<float> load_checkpoint(const std::filesystem::path&);
template Model<double> load_checkpoint(const std::filesystem::path&);

}  // namespace meshrt
