#pragma once

// Plain-text run configuration: one `key = value` per line, `#` comments.
// Unknown keys are rejected so typos do not silently fall back to defaults.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cornerformer/geometry.hpp"

namespace cornerformer {

struct Config {
  // model
  int image_size = 64;
  std::vector<int> channels = {32, 48, 64, 96, 128, 128};
  int d_model = 128;
  int fine_dim = 128;
  int ffn_mult = 4;
  int heads = 8;
  int points = 4;
  int encoder_layers = 1;
  int pfem_layers = 6;
  int decoder_layers = 6;
  int mix_kernel = 3;
  double offset_scale = 0.1;
  bool corner_features = true;

  // targets and decoding
  double sigma = 2.0;
  double seg_width = 3.0;
  double corner_threshold = 0.5;
  double edge_threshold = 0.5;
  double cluster_radius = 5.0;
  int max_corners = 48;
  int max_train_corners = 32;
  double match_radius = -1.0;  // < 0: 8 px at 256, scaled with image size

  // training
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch = 4;
  int steps = 2000;
  int candidates = 64;  // T
  double lambda_direct = 0.05;
  double lambda_seg = 0.05;
  double boost_weight = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;

  double effective_match_radius() const {
    return match_radius >= 0 ? match_radius : 8.0 * image_size / 256.0;
  }
};

namespace detail {

struct ConfigField {
  const char* key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <class V>
std::string fmt_value(const V& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t n = 0;
    const double v = std::stod(s, &n);
    if (n != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" + s + "'");
  }
}

inline long long parse_int(const std::string& key, const std::string& s) {
  try {
    std::size_t n = 0;
    const long long v = std::stoll(s, &n);
    if (n != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer: '" + s + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + s + "'");
}

#define CF_INT(name) \
  ConfigField { #name, [](Config& c, const std::string& v) { c.name = static_cast<decltype(c.name)>(parse_int(#name, v)); }, [](const Config& c) { return fmt_value(c.name); } }
#define CF_DBL(name) \
  ConfigField { #name, [](Config& c, const std::string& v) { c.name = parse_double(#name, v); }, [](const Config& c) { return fmt_value(c.name); } }
#define CF_BOOL(name) \
  ConfigField { #name, [](Config& c, const std::string& v) { c.name = parse_bool(#name, v); }, [](const Config& c) { return std::string(c.name ? "true" : "false"); } }

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      CF_INT(image_size),
      ConfigField{"channels",
                  [](Config& c, const std::string& v) {
                    c.channels.clear();
                    std::stringstream ss(v);
                    std::string item;
                    while (std::getline(ss, item, ',')) {
                      item.erase(0, item.find_first_not_of(" \t"));
                      item.erase(item.find_last_not_of(" \t") + 1);
                      c.channels.push_back(static_cast<int>(parse_int("channels", item)));
                    }
                    if (c.channels.size() != 6) throw ConfigError("config key 'channels' needs 6 values");
                  },
                  [](const Config& c) {
                    std::string s;
                    for (std::size_t i = 0; i < c.channels.size(); ++i)
                      s += (i ? "," : "") + std::to_string(c.channels[i]);
                    return s;
                  }},
      CF_INT(d_model),
      CF_INT(fine_dim),
      CF_INT(ffn_mult),
      CF_INT(heads),
      CF_INT(points),
      CF_INT(encoder_layers),
      CF_INT(pfem_layers),
      CF_INT(decoder_layers),
      CF_INT(mix_kernel),
      CF_DBL(offset_scale),
      CF_BOOL(corner_features),
      CF_DBL(sigma),
      CF_DBL(seg_width),
      CF_DBL(corner_threshold),
      CF_DBL(edge_threshold),
      CF_DBL(cluster_radius),
      CF_INT(max_corners),
      CF_INT(max_train_corners),
      CF_DBL(match_radius),
      CF_DBL(lr),
      CF_DBL(beta1),
      CF_DBL(beta2),
      CF_INT(batch),
      CF_INT(steps),
      CF_INT(candidates),
      CF_DBL(lambda_direct),
      CF_DBL(lambda_seg),
      CF_DBL(boost_weight),
      CF_INT(seed),
      CF_INT(checkpoint_every),
  };
  return fields;
}

#undef CF_INT
#undef CF_DBL
#undef CF_BOOL

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline void set_config_value(Config& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields())
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline Config parse_config(const std::string& text, Config cfg = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    try {
      set_config_value(cfg, key, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline Config load_config(const std::string& path, Config cfg = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(cfg));
}

inline std::string config_to_text(const Config& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

inline std::vector<std::pair<std::string, std::string>> config_items(const Config& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : detail::config_fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

}  // namespace cornerformer
