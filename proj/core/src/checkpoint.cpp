#include "revealtoy/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "revealtoy/error.hpp"

namespace revealtoy {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated checkpoint while reading " + what);
  return v;
}

json model_to_json(const ModelConfig& m) {
  return json{{"width", m.width},
              {"heads", m.heads},
              {"rope_split", {m.rope.layer, m.rope.y, m.rope.x}},
              {"rope_base", m.rope_base},
              {"blocks", m.blocks},
              {"mlp_ratio", m.mlp_ratio},
              {"patch", m.patch},
              {"text_tokens", m.text_tokens},
              {"canvas", m.canvas},
              {"use_raa", m.use_raa},
              {"use_oga", m.use_oga}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.width = j.value("width", m.width);
  m.heads = j.value("heads", m.heads);
  if (j.contains("rope_split")) {
    const auto& r = j.at("rope_split");
    m.rope = {r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>(), r.at(2).get<std::size_t>()};
  }
  m.rope_base = j.value("rope_base", m.rope_base);
  m.blocks = j.value("blocks", m.blocks);
  m.mlp_ratio = j.value("mlp_ratio", m.mlp_ratio);
  m.patch = j.value("patch", m.patch);
  m.text_tokens = j.value("text_tokens", m.text_tokens);
  m.canvas = j.value("canvas", m.canvas);
  m.use_raa = j.value("use_raa", m.use_raa);
  m.use_oga = j.value("use_oga", m.use_oga);
  return m;
}

}  // namespace

std::string dump_run_config(const RunConfig& cfg) {
  json j{{"model", model_to_json(cfg.model)},
         {"loss",
          {{"tau", cfg.loss.tau},
           {"gamma", cfg.loss.gamma},
           {"eps_log", cfg.loss.eps_log},
           {"eps_cos", cfg.loss.eps_cos},
           {"lambda_alpha", cfg.loss.lambda_alpha},
           {"lambda_orth", cfg.loss.lambda_orth}}},
         {"adam", {{"lr", cfg.adam.lr}, {"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2}, {"eps", cfg.adam.eps}}},
         {"checkpoint_every", cfg.checkpoint_every},
         {"init_seed", cfg.init_seed}};
  return j.dump(2) + "\n";
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  try {
    const json j = json::parse(text);
    if (j.contains("model")) cfg.model = model_from_json(j.at("model"));
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      cfg.loss.tau = l.value("tau", cfg.loss.tau);
      cfg.loss.gamma = l.value("gamma", cfg.loss.gamma);
      cfg.loss.eps_log = l.value("eps_log", cfg.loss.eps_log);
      cfg.loss.eps_cos = l.value("eps_cos", cfg.loss.eps_cos);
      cfg.loss.lambda_alpha = l.value("lambda_alpha", cfg.loss.lambda_alpha);
      cfg.loss.lambda_orth = l.value("lambda_orth", cfg.loss.lambda_orth);
    }
    if (j.contains("adam")) {
      const json& a = j.at("adam");
      cfg.adam.lr = a.value("lr", cfg.adam.lr);
      cfg.adam.beta1 = a.value("beta1", cfg.adam.beta1);
      cfg.adam.beta2 = a.value("beta2", cfg.adam.beta2);
      cfg.adam.eps = a.value("eps", cfg.adam.eps);
    }
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.init_seed = j.value("init_seed", cfg.init_seed);
  } catch (const json::exception& e) {
    throw ValidationError("config", std::string("invalid run config: ") + e.what());
  }
  cfg.model.validate();
  cfg.loss.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void write_tensors(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os.write("RVLT", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xFFFF) throw Error("tensor name too long: " + name);
    put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    if (t.dtype() == DType::f32) {
      for (double v : t.values()) put<float>(os, static_cast<float>(v));
    } else {
      os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
  }
  if (!os) throw Error("failed writing " + path.string());
}

std::map<std::string, Tensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "RVLT", 4) != 0) throw Error(path.string() + " is not an RVLT file");
  const auto version = get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(is, "tensor count");
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint16_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw Error("truncated checkpoint while reading a name");
    const auto code = get<std::uint8_t>(is, name);
    if (code > 1) throw Error("unknown dtype code for " + name);
    const auto ndim = get<std::uint8_t>(is, name);
    Shape shape(ndim);
    for (auto& d : shape) d = get<std::uint32_t>(is, name);
    const DType dtype = static_cast<DType>(code);
    Tensor t(shape, 0.0, dtype);
    for (double& v : t.values()) v = dtype == DType::f32 ? static_cast<double>(get<float>(is, name)) : get<double>(is, name);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const RunConfig& cfg) {
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, var] : params.all()) tensors.emplace(name, var->value);
  write_tensors(path, tensors);
  std::ofstream os(path.parent_path() / "config.json");
  if (!os) throw Error("cannot write config.json next to " + path.string());
  os << dump_run_config(cfg);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const RunConfig cfg = load_run_config(path.parent_path() / "config.json");
  auto tensors = read_tensors(path);
  ModelParams params(cfg.model);
  for (const auto& [name, shape] : ModelParams::layout_for(cfg.model)) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("checkpoint is missing parameter " + name);
    if (it->second.shape() != shape) {
      throw Error("parameter " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                  shape_str(shape));
    }
    params.set(name, std::move(it->second));
  }
  return {std::move(params), cfg, path.stem().string() + "-" + file_digest(path)};
}

void save_optimizer(const std::filesystem::path& path, const Adam& opt) {
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, t] : opt.first_moments()) tensors.emplace("m." + name, t);
  for (const auto& [name, t] : opt.second_moments()) tensors.emplace("v." + name, t);
  tensors.emplace("step", Tensor::scalar(static_cast<double>(opt.steps())));
  write_tensors(path, tensors);
}

void load_optimizer(const std::filesystem::path& path, Adam& opt) {
  std::map<std::string, Tensor> m, v;
  std::uint64_t step = 0;
  for (auto& [name, t] : read_tensors(path)) {
    if (name == "step") {
      step = static_cast<std::uint64_t>(t.item());
    } else if (name.starts_with("m.")) {
      m.emplace(name.substr(2), std::move(t));
    } else if (name.starts_with("v.")) {
      v.emplace(name.substr(2), std::move(t));
    } else {
      throw Error("unexpected entry " + name + " in optimizer state " + path.string());
    }
  }
  opt.set_moments(std::move(m), std::move(v));
  opt.set_steps(step);
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (std::istreambuf_iterator<char> it(is), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 8);
}

}  // namespace revealtoy
