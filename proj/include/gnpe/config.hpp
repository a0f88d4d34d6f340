#pragma once

// Run configuration: a flat TOML file with [sim], [train], [arch] and
// [prior] sections. The parser covers the subset those sections need
// (comments, sections, key = value with ints, floats, bools, strings and
// flat numeric arrays). The data hash fingerprints the data-generating
// parts (sim dims + prior box) and chains corpus -> training -> checkpoint.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gnpe/abm.hpp"
#include "gnpe/embedder.hpp"
#include "gnpe/errors.hpp"
#include "gnpe/flow.hpp"
#include "gnpe/training.hpp"

namespace gnpe {

struct TomlValue {
  enum class Kind { kInt, kFloat, kBool, kString, kArray };
  Kind kind = Kind::kInt;
  long long int_v = 0;
  double float_v = 0.0;
  bool bool_v = false;
  std::string string_v;
  std::vector<double> array_v;

  double as_number() const {
    if (kind == Kind::kInt) return static_cast<double>(int_v);
    if (kind == Kind::kFloat) return float_v;
    throw ConfigError("config value is not a number");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline TomlValue parse_scalar(const std::string& raw, int line_no) {
  TomlValue v;
  const std::string s = trim(raw);
  if (s.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
  if (s == "true" || s == "false") {
    v.kind = TomlValue::Kind::kBool;
    v.bool_v = s == "true";
    return v;
  }
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"')
      throw ConfigError("config line " + std::to_string(line_no) + ": unterminated string");
    v.kind = TomlValue::Kind::kString;
    v.string_v = s.substr(1, s.size() - 2);
    return v;
  }
  const bool looks_float = s.find_first_of(".eE") != std::string::npos &&
                           s.find("0x") != 0;
  try {
    std::size_t used = 0;
    if (looks_float) {
      v.kind = TomlValue::Kind::kFloat;
      v.float_v = std::stod(s, &used);
    } else {
      v.kind = TomlValue::Kind::kInt;
      v.int_v = std::stoll(s, &used, 0);
    }
    if (used != s.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw ConfigError("config line " + std::to_string(line_no) + ": bad value '" + s + "'");
  }
  return v;
}

}  // namespace detail

// Keys are "section.key"; top-level keys have no prefix.
inline std::map<std::string, TomlValue> parse_toml(const std::string& text) {
  std::map<std::string, TomlValue> out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string raw = detail::trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full))
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key " + full);
    if (!raw.empty() && raw.front() == '[') {
      if (raw.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated array");
      TomlValue v;
      v.kind = TomlValue::Kind::kArray;
      std::string body = raw.substr(1, raw.size() - 2);
      std::string item;
      std::istringstream items(body);
      while (std::getline(items, item, ',')) {
        item = detail::trim(item);
        if (item.empty()) continue;
        v.array_v.push_back(detail::parse_scalar(item, line_no).as_number());
      }
      out.emplace(full, std::move(v));
    } else {
      out.emplace(full, detail::parse_scalar(raw, line_no));
    }
  }
  return out;
}

struct RunConfig {
  SimConfig sim;
  TrainConfig train;
  PriorBox prior;
  int arch_q = 3;
  int arch_hidden = 64;
  int arch_readout1 = 32;
  int arch_readout2 = 16;
  int arch_embed_dim = 16;
  int arch_flow_blocks = 5;
  int arch_flow_hidden = 50;
  double arch_alpha_clamp = 7.0;

  EmbedderArch embedder_arch() const {
    EmbedderArch a;
    a.n_agents = sim.n_agents;
    a.n_topics = sim.n_topics;
    a.q = arch_q;
    a.hidden = arch_hidden;
    a.readout1 = arch_readout1;
    a.readout2 = arch_readout2;
    a.embed_dim = arch_embed_dim;
    return a;
  }

  FlowArch flow_arch() const {
    FlowArch f;
    f.dim = ModelParams::kDim;
    f.context_dim = arch_embed_dim;
    f.n_blocks = arch_flow_blocks;
    f.hidden = arch_flow_hidden;
    f.alpha_clamp = arch_alpha_clamp;
    return f;
  }

  void validate() const {
    sim.validate();
    train.validate();
    prior.validate();
    embedder_arch().validate();
    flow_arch().validate();
  }

  // Stable fingerprint of the data-generating configuration (sim dims +
  // prior box); training seeds and hyperparameters are excluded on purpose.
  std::uint64_t data_hash() const {
    std::ostringstream s;
    s << "sim:" << sim.n_agents << "," << sim.n_topics << "," << sim.n_steps << ";prior:";
    s.precision(17);
    for (int d = 0; d < ModelParams::kDim; ++d)
      s << prior.lo[d] << "," << prior.hi[d] << ";";
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (const char c : s.str()) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return h;
  }
};

inline RunConfig config_from_toml(const std::map<std::string, TomlValue>& kv) {
  RunConfig cfg;
  auto get_int = [&](const std::string& key, int& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    if (it->second.kind != TomlValue::Kind::kInt)
      throw ConfigError("config: " + key + " must be an integer");
    dst = static_cast<int>(it->second.int_v);
  };
  auto get_u64 = [&](const std::string& key, std::uint64_t& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    if (it->second.kind != TomlValue::Kind::kInt)
      throw ConfigError("config: " + key + " must be an integer");
    dst = static_cast<std::uint64_t>(it->second.int_v);
  };
  auto get_num = [&](const std::string& key, double& dst) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    dst = it->second.as_number();
  };
  auto get_bounds = [&](const std::string& key, int dim) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    if (it->second.kind != TomlValue::Kind::kArray || it->second.array_v.size() != 2)
      throw ConfigError("config: " + key + " must be [lo, hi]");
    cfg.prior.lo[dim] = it->second.array_v[0];
    cfg.prior.hi[dim] = it->second.array_v[1];
  };

  static const char* known[] = {
      "sim.n_agents",     "sim.n_topics",      "sim.n_steps",       "sim.seed",
      "train.n_sims",     "train.batch_size",  "train.lr",          "train.val_fraction",
      "train.patience_epochs", "train.max_epochs", "train.seed",    "train.jobs",
      "arch.q",           "arch.hidden",       "arch.readout",      "arch.embed_dim",
      "arch.flow_blocks", "arch.flow_hidden",  "arch.alpha_clamp",
      "prior.rho",        "prior.eps",         "prior.lam",         "prior.p_init"};
  for (const auto& [key, value] : kv) {
    (void)value;
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw ConfigError("config: unknown key '" + key + "'");
  }

  get_int("sim.n_agents", cfg.sim.n_agents);
  get_int("sim.n_topics", cfg.sim.n_topics);
  get_int("sim.n_steps", cfg.sim.n_steps);
  get_u64("sim.seed", cfg.sim.seed);
  get_int("train.n_sims", cfg.train.n_sims);
  get_int("train.batch_size", cfg.train.batch_size);
  get_num("train.lr", cfg.train.lr);
  get_num("train.val_fraction", cfg.train.val_fraction);
  get_int("train.patience_epochs", cfg.train.patience_epochs);
  get_int("train.max_epochs", cfg.train.max_epochs);
  get_u64("train.seed", cfg.train.seed);
  get_int("train.jobs", cfg.train.jobs);
  get_int("arch.q", cfg.arch_q);
  get_int("arch.hidden", cfg.arch_hidden);
  get_int("arch.embed_dim", cfg.arch_embed_dim);
  get_int("arch.flow_blocks", cfg.arch_flow_blocks);
  get_int("arch.flow_hidden", cfg.arch_flow_hidden);
  get_num("arch.alpha_clamp", cfg.arch_alpha_clamp);
  if (auto it = kv.find("arch.readout"); it != kv.end()) {
    if (it->second.kind != TomlValue::Kind::kArray || it->second.array_v.size() != 3)
      throw ConfigError("config: arch.readout must be [r1, r2, embed_dim]");
    cfg.arch_readout1 = static_cast<int>(it->second.array_v[0]);
    cfg.arch_readout2 = static_cast<int>(it->second.array_v[1]);
    cfg.arch_embed_dim = static_cast<int>(it->second.array_v[2]);
  }
  get_bounds("prior.rho", 0);
  get_bounds("prior.eps", 1);
  get_bounds("prior.lam", 2);
  get_bounds("prior.p_init", 3);
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return config_from_toml(parse_toml(buf.str()));
}

}  // namespace gnpe
