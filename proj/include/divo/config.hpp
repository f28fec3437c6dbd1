#pragma once

// Training hyperparameters and their flat "key = value" text form.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "divo/errors.hpp"

namespace divo {

struct TrainConfig {
  std::int64_t total_iterations = 50000;
  int batch_size = 256;
  int hidden_dim = 256;
  int num_layers = 3;
  double lr_policy = 3e-4;
  double lr_q = 3e-4;
  double lr_value = 3e-4;
  double lr_diffusion = 3e-4;
  double tau = 5e-3;
  double gamma = 0.99;
  double policy_noise = 0.2;
  std::pair<double, double> noise_clip{-0.5, 0.5};
  int policy_update_freq = 2;
  double alpha = 2.5;
  double beta_reg = 0.4;
  double eta = 1.0;
  int K = 5;
  double expectile = 0.5;
  double grad_clip_norm = 0.0;
  bool normalize_state = true;
  int matmul_bits = 32;  // 32 or 64; see MatmulPrecision
  std::int64_t eval_interval = 1000;
  int eval_episodes = 10;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (total_iterations < 0) fail("total_iterations must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (hidden_dim < 1 || num_layers < 1) fail("hidden_dim and num_layers must be >= 1");
    if (!(lr_policy > 0 && lr_q > 0 && lr_value > 0 && lr_diffusion > 0)) fail("learning rates must be > 0");
    if (!(tau > 0.0 && tau <= 1.0)) fail("tau must lie in (0, 1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
    if (policy_noise < 0.0) fail("policy_noise must be >= 0");
    if (noise_clip.first > noise_clip.second) fail("noise_clip must be an ordered interval");
    if (policy_update_freq < 1) fail("policy_update_freq must be >= 1");
    if (!(alpha > 0.0)) fail("alpha must be > 0");
    if (!(beta_reg > 0.0)) fail("beta_reg must be > 0");
    if (!(eta > 0.0)) fail("eta must be > 0");
    if (K < 1) fail("K must be >= 1");
    if (!(expectile > 0.0 && expectile < 1.0)) fail("expectile must lie in (0, 1)");
    if (grad_clip_norm < 0.0) fail("grad_clip_norm must be >= 0");
    if (eval_interval < 0) fail("eval_interval must be >= 0");
    if (eval_episodes < 1) fail("eval_episodes must be >= 1");
    if (matmul_bits != 32 && matmul_bits != 64) fail("matmul_bits must be 32 or 64");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw ConfigError("config: invalid value '" + text + "' for " + key);
  return v;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct ConfigField {
  const char* name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
ConfigField number_field(const char* name, T TrainConfig::*member) {
  return {name,
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member, name](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(name, v); }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      number_field("total_iterations", &TrainConfig::total_iterations),
      number_field("batch_size", &TrainConfig::batch_size),
      number_field("hidden_dim", &TrainConfig::hidden_dim),
      number_field("num_layers", &TrainConfig::num_layers),
      number_field("lr_policy", &TrainConfig::lr_policy),
      number_field("lr_q", &TrainConfig::lr_q),
      number_field("lr_value", &TrainConfig::lr_value),
      number_field("lr_diffusion", &TrainConfig::lr_diffusion),
      number_field("tau", &TrainConfig::tau),
      number_field("gamma", &TrainConfig::gamma),
      number_field("policy_noise", &TrainConfig::policy_noise),
      {"noise_clip",
       [](const TrainConfig& c) { return format_double(c.noise_clip.first) + "," + format_double(c.noise_clip.second); },
       [](TrainConfig& c, const std::string& v) {
         const auto comma = v.find(',');
         if (comma == std::string::npos) throw ConfigError("config: noise_clip must be 'lo,hi'");
         c.noise_clip = {parse_number<double>("noise_clip", trim(v.substr(0, comma))),
                         parse_number<double>("noise_clip", trim(v.substr(comma + 1)))};
       }},
      number_field("policy_update_freq", &TrainConfig::policy_update_freq),
      number_field("alpha", &TrainConfig::alpha),
      number_field("beta_reg", &TrainConfig::beta_reg),
      number_field("eta", &TrainConfig::eta),
      number_field("K", &TrainConfig::K),
      number_field("expectile", &TrainConfig::expectile),
      number_field("grad_clip_norm", &TrainConfig::grad_clip_norm),
      {"normalize_state", [](const TrainConfig& c) { return std::string(c.normalize_state ? "true" : "false"); },
       [](TrainConfig& c, const std::string& v) {
         if (v == "true" || v == "1") c.normalize_state = true;
         else if (v == "false" || v == "0") c.normalize_state = false;
         else throw ConfigError("config: normalize_state must be true or false");
       }},
      number_field("matmul_bits", &TrainConfig::matmul_bits),
      number_field("eval_interval", &TrainConfig::eval_interval),
      number_field("eval_episodes", &TrainConfig::eval_episodes),
      number_field("seed", &TrainConfig::seed),
  };
  return fields;
}

}  // namespace detail

// Sets one field by name; unknown keys are errors.
inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields())
    if (key == f.name) {
      f.set(c, detail::trim(value));
      return;
    }
  throw ConfigError("config: unknown key '" + key + "'");
}

inline std::string get_config_value(const TrainConfig& c, const std::string& key) {
  for (const auto& f : detail::config_fields())
    if (key == f.name) return f.get(c);
  throw ConfigError("config: unknown key '" + key + "'");
}

// Starts from defaults; '#' begins a comment.
inline TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    set_config_value(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

inline std::string format_config(const TrainConfig& c) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += std::string(f.name) + " = " + f.get(c) + "\n";
  return out;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace divo
