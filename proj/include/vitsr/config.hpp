#pragma once

// Flat key=value run configuration. One namespace of keys covers model
// architecture, training protocol, and data location; precedence is
// command-line flag > config file > built-in default. Unknown keys are hard
// errors, and the resolved configuration can be echoed deterministically
// (sorted keys) so every run records exactly what it used.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vitsr/data.hpp"
#include "vitsr/errors.hpp"
#include "vitsr/model.hpp"
#include "vitsr/optim.hpp"

namespace vitsr {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_root;
  int crop_size = 0;  // 0 = follow model.image_size
  int scale = 4;
  std::string run_dir = "runs/run";
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline long long config_int(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + value + "'");
  }
  if (pos != value.size()) throw ConfigError("bad integer for " + key + ": '" + value + "'");
  return v;
}

inline double config_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + value + "'");
  }
  if (pos != value.size()) throw ConfigError("bad number for " + key + ": '" + value + "'");
  return v;
}

inline bool config_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw ConfigError("bad on/off value for " + key + ": '" + value + "'");
}

inline std::vector<int> config_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::string item;
  std::istringstream ss(value);
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(config_int(key, trim(item))));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

// Shortest representation that parses back to the same value.
template <typename F>
std::string format_number(F v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

// Applies one key=value setting. Throws ConfigError for unknown keys or
// unparsable values.
inline void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto as_int = [&] { return static_cast<int>(detail::config_int(key, value)); };
  auto as_double = [&] { return detail::config_double(key, value); };

  if (key == "image_size") cfg.model.image_size = as_int();
  else if (key == "patch_size") cfg.model.patch_size = as_int();
  else if (key == "embed_dim") cfg.model.embed_dim = as_int();
  else if (key == "encoder_depth") cfg.model.encoder_depth = as_int();
  else if (key == "decoder_depth") cfg.model.decoder_depth = as_int();
  else if (key == "num_heads_encoder") cfg.model.num_heads_encoder = as_int();
  else if (key == "num_heads_decoder") cfg.model.num_heads_decoder = as_int();
  else if (key == "mlp_ratio") cfg.model.mlp_ratio = as_double();
  else if (key == "upsample_stages") cfg.model.upsample_stages = as_int();
  else if (key == "head_channels") cfg.model.head_channels = detail::config_int_list(key, value);
  else if (key == "leaky_slope") cfg.model.leaky_slope = static_cast<float>(as_double());
  else if (key == "residual_mode") cfg.model.residual_mode = detail::config_bool(key, value);
  else if (key == "lr_init") cfg.train.lr_init = as_double();
  else if (key == "weight_decay") cfg.train.weight_decay = as_double();
  else if (key == "beta1") cfg.train.beta1 = as_double();
  else if (key == "beta2") cfg.train.beta2 = as_double();
  else if (key == "eps") cfg.train.eps = as_double();
  else if (key == "batch_size") cfg.train.batch_size = as_int();
  else if (key == "max_epochs") cfg.train.max_epochs = as_int();
  else if (key == "patience") cfg.train.patience = as_int();
  else if (key == "sched_T0") cfg.train.sched_T0 = as_int();
  else if (key == "sched_Tmult") cfg.train.sched_Tmult = as_int();
  else if (key == "lambda") cfg.train.lambda = as_double();
  else if (key == "seed") cfg.train.seed = static_cast<std::uint64_t>(detail::config_int(key, value));
  else if (key == "data_root") cfg.data_root = value;
  else if (key == "crop_size") cfg.crop_size = as_int();
  else if (key == "scale") cfg.scale = as_int();
  else if (key == "run_dir") cfg.run_dir = value;
  else if (key == "stage") throw ConfigError("'stage' is set by the subcommand, not the config");
  else throw ConfigError("unknown config key '" + key + "'");
}

// KEY=VALUE lines; '#' starts a comment, blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected KEY=VALUE, got '" + line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    pairs.emplace_back(std::move(key), std::move(value));
  }
  return pairs;
}

// Builds the effective config for a stage: stage defaults, then the config
// file, then explicit flag overrides. crop_size left unset follows the model
// input size.
inline RunConfig resolve_config(Stage stage, const std::string& config_path,
                                const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  cfg.train = stage_defaults(stage);
  if (!config_path.empty())
    for (const auto& [k, v] : parse_config_file(config_path)) apply_config_key(cfg, k, v);
  for (const auto& [k, v] : overrides) apply_config_key(cfg, k, v);
  if (cfg.crop_size == 0) cfg.crop_size = cfg.model.image_size;
  return cfg;
}

inline DatasetSpec dataset_spec(const RunConfig& cfg, const std::string& split) {
  DatasetSpec spec;
  spec.root = cfg.data_root;
  spec.split = split;
  spec.crop_size = cfg.crop_size;
  spec.scale = cfg.scale;
  spec.seed = cfg.train.seed;
  return spec;
}

// Every effective setting, one `key=value` per line, keys sorted.
inline std::string echo_config(const RunConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["image_size"] = std::to_string(cfg.model.image_size);
  kv["patch_size"] = std::to_string(cfg.model.patch_size);
  kv["embed_dim"] = std::to_string(cfg.model.embed_dim);
  kv["encoder_depth"] = std::to_string(cfg.model.encoder_depth);
  kv["decoder_depth"] = std::to_string(cfg.model.decoder_depth);
  kv["num_heads_encoder"] = std::to_string(cfg.model.num_heads_encoder);
  kv["num_heads_decoder"] = std::to_string(cfg.model.num_heads_decoder);
  kv["mlp_ratio"] = detail::format_number(cfg.model.mlp_ratio);
  kv["upsample_stages"] = std::to_string(cfg.model.upsample_stages);
  {
    std::string list;
    for (std::size_t i = 0; i < cfg.model.head_channels.size(); ++i) {
      if (i) list += ',';
      list += std::to_string(cfg.model.head_channels[i]);
    }
    kv["head_channels"] = list;
  }
  kv["leaky_slope"] = detail::format_number(cfg.model.leaky_slope);
  kv["residual_mode"] = cfg.model.residual_mode ? "on" : "off";
  kv["stage"] = stage_name(cfg.train.stage);
  kv["lr_init"] = detail::format_number(cfg.train.lr_init);
  kv["weight_decay"] = detail::format_number(cfg.train.weight_decay);
  kv["beta1"] = detail::format_number(cfg.train.beta1);
  kv["beta2"] = detail::format_number(cfg.train.beta2);
  kv["eps"] = detail::format_number(cfg.train.eps);
  kv["batch_size"] = std::to_string(cfg.train.batch_size);
  kv["max_epochs"] = std::to_string(cfg.train.max_epochs);
  kv["patience"] = std::to_string(cfg.train.patience);
  kv["sched_T0"] = std::to_string(cfg.train.sched_T0);
  kv["sched_Tmult"] = std::to_string(cfg.train.sched_Tmult);
  kv["lambda"] = detail::format_number(cfg.train.lambda);
  kv["seed"] = std::to_string(cfg.train.seed);
  kv["data_root"] = cfg.data_root;
  kv["crop_size"] = std::to_string(cfg.crop_size);
  kv["scale"] = std::to_string(cfg.scale);
  kv["run_dir"] = cfg.run_dir;
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

}  // namespace vitsr
