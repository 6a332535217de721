#include "kgt/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace kgt {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool parse_int(std::string_view s, std::int64_t& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_real(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_list(std::string_view s, std::vector<std::int64_t>& out) {
  out.clear();
  while (true) {
    const auto comma = s.find(',');
    std::int64_t v;
    if (!parse_int(s.substr(0, comma), v)) return false;
    out.push_back(v);
    if (comma == std::string_view::npos) return true;
    s.remove_prefix(comma + 1);
  }
}

const ConfigKey* find_key(std::string_view name) {
  for (const auto& k : Config::keys())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

const std::vector<ConfigKey>& Config::keys() {
  static const std::vector<ConfigKey> table = {
      {"channels", ConfigType::Int, "32", "feature channels C"},
      {"stages", ConfigType::Int, "2", "number of KGT stages"},
      {"layers", ConfigType::Int, "2", "layers per stage"},
      {"heads", ConfigType::Int, "2", "attention heads (must divide channels)"},
      {"window", ConfigType::Int, "8", "window side; a window holds window² nodes"},
      {"ffn_ratio", ConfigType::Int, "2", "feed-forward expansion ratio"},
      {"seed", ConfigType::Int, "0", "seed for initialization and data"},
      {"steps", ConfigType::Int, "2000", "optimizer steps"},
      {"batch", ConfigType::Int, "8", "patches per step"},
      {"patch", ConfigType::Int, "64", "patch side in pixels"},
      {"sigma", ConfigType::Real, "25", "noise standard deviation on the 0-255 scale"},
      {"lr", ConfigType::Real, "2e-4", "peak learning rate"},
      {"lr_min", ConfigType::Real, "2e-5", "final learning rate of the cosine decay"},
      {"schedule", ConfigType::Word, "random", "top-k schedule: fixed or random"},
      {"k", ConfigType::Int, "16", "neighbor count for the fixed schedule"},
      {"k_set", ConfigType::IntList, "4,8,16,32", "candidate k values for the random schedule"},
      {"backend", ConfigType::Word, "gather", "attention backend: gather, mask or streaming"},
      {"block_size", ConfigType::Int, "16", "key block size of the streaming backend"},
      {"eval_every", ConfigType::Int, "250", "steps between held-out evaluations (0 = end only)"},
      {"eval_images", ConfigType::Int, "8", "held-out patches per evaluation"},
  };
  return table;
}

Config::Config() {
  for (const auto& k : keys()) values_[k.name] = k.default_value;
}

void Config::set(std::string_view key, std::string_view value) {
  const ConfigKey* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + std::string(key) + "'");
  value = trim(value);
  bool ok = true;
  switch (k->type) {
    case ConfigType::Int: {
      std::int64_t v;
      ok = parse_int(value, v) && v >= 0;
      break;
    }
    case ConfigType::Real: {
      double v;
      ok = parse_real(value, v);
      break;
    }
    case ConfigType::IntList: {
      std::vector<std::int64_t> v;
      ok = parse_list(value, v);
      break;
    }
    case ConfigType::Word:
      ok = !value.empty() && value.find_first_of(" \t") == std::string_view::npos;
      break;
  }
  if (!ok) {
    throw ConfigError("config key '" + std::string(key) + "': cannot read '" + std::string(value) +
                      "'");
  }
  values_[std::string(key)] = std::string(value);
}

const std::string& Config::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::int64_t Config::get_int(std::string_view key) const {
  std::int64_t v = 0;
  parse_int(get(key), v);
  return v;
}

double Config::get_real(std::string_view key) const {
  double v = 0;
  parse_real(get(key), v);
  return v;
}

std::vector<std::int64_t> Config::get_int_list(std::string_view key) const {
  std::vector<std::int64_t> v;
  parse_list(get(key), v);
  return v;
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + get(k.name) + "\n";
  return out;
}

Config parse_config(std::string_view text) {
  Config cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace kgt
