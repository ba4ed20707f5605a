#include "m3sr/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "m3sr/errors.hpp"

namespace m3sr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true or false, got '" + v + "'");
}

bool set_model(ModelConfig& m, const std::string& key, const std::string& v) {
  if (key == "in_channels") m.in_channels = to_uint(key, v);
  else if (key == "out_channels") m.out_channels = to_uint(key, v);
  else if (key == "base_width") m.base_width = to_uint(key, v);
  else if (key == "blocks_per_stage") m.blocks_per_stage = to_uint(key, v);
  else if (key == "state") m.state = to_uint(key, v);
  else if (key == "groups") m.groups = to_uint(key, v);
  else if (key == "vss_expand") m.vss_expand = to_uint(key, v);
  else if (key == "mamba_width") m.mamba_width = to_uint(key, v);
  else if (key == "spatial") m.spatial = to_bool(key, v);
  else if (key == "frequency") m.frequency = to_bool(key, v);
  else if (key == "spectral") m.spectral = to_bool(key, v);
  else if (key == "d_skip") m.d_skip = to_bool(key, v);
  else if (key == "model_seed") m.seed = to_uint(key, v);
  else return false;
  return true;
}

template <typename Fn>
void for_each_entry(const std::string& text, Fn&& fn) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    try {
      fn(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& v) {
  if (set_model(model, key, v)) return;
  if (key == "seed") set_seed(to_uint(key, v));
  else if (key == "batch_size") train.batch_size = to_uint(key, v);
  else if (key == "epochs") train.epochs = to_uint(key, v);
  else if (key == "lr0") train.lr0 = to_real(key, v);
  else if (key == "lr_min") train.lr_min = to_real(key, v);
  else if (key == "beta1") train.beta1 = to_real(key, v);
  else if (key == "beta2") train.beta2 = to_real(key, v);
  else if (key == "adam_eps") train.adam_eps = to_real(key, v);
  else if (key == "patch") train.patch = to_uint(key, v);
  else if (key == "augment") train.augment = to_bool(key, v);
  else if (key == "max_steps") train.max_steps = to_uint(key, v);
  else if (key == "synth_height") synth_height = to_uint(key, v);
  else if (key == "synth_width") synth_width = to_uint(key, v);
  else if (key == "val_pairs") val_pairs = to_uint(key, v);
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::set_seed(std::uint64_t seed) {
  model.seed = seed;
  train.seed = seed;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  require_divisible(synth_height, synth_width);
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  for_each_entry(text, [&cfg](const std::string& k, const std::string& v) { cfg.set(k, v); });
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string model_config_text(const ModelConfig& m) {
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "in_channels = " << m.in_channels << '\n'
     << "out_channels = " << m.out_channels << '\n'
     << "base_width = " << m.base_width << '\n'
     << "blocks_per_stage = " << m.blocks_per_stage << '\n'
     << "state = " << m.state << '\n'
     << "groups = " << m.groups << '\n'
     << "vss_expand = " << m.vss_expand << '\n'
     << "mamba_width = " << m.mamba_width << '\n'
     << "spatial = " << b(m.spatial) << '\n'
     << "frequency = " << b(m.frequency) << '\n'
     << "spectral = " << b(m.spectral) << '\n'
     << "d_skip = " << b(m.d_skip) << '\n'
     << "model_seed = " << m.seed << '\n';
  return os.str();
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig m;
  for_each_entry(text, [&m](const std::string& k, const std::string& v) {
    if (!set_model(m, k, v)) throw ConfigError("unknown model key '" + k + "'");
  });
  m.validate();
  return m;
}

}  // namespace m3sr
