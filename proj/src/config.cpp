#include "scgib/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "scgib/encoder.hpp"

namespace scgib {
namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

int parse_int(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(value.c_str(), &end, 10);
  if (errno != 0 || end == value.c_str() || *end != '\0') {
    throw ConfigError("key " + key + " expects an integer, got \"" + value + "\"");
  }
  return static_cast<int>(v);
}

std::uint64_t parse_uint64(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (errno != 0 || end == value.c_str() || *end != '\0' || value.find('-') != std::string::npos) {
    throw ConfigError("key " + key + " expects a non-negative integer, got \"" + value + "\"");
  }
  return static_cast<std::uint64_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (errno != 0 || end == value.c_str() || *end != '\0') {
    throw ConfigError("key " + key + " expects a number, got \"" + value + "\"");
  }
  return v;
}

}  // namespace

void apply_config_entry(TrainConfig& config, const std::string& key, const std::string& raw) {
  const std::string value = unquote(raw);
  if (key == "batch_size") {
    config.batch_size = parse_int(key, value);
  } else if (key == "epochs") {
    config.epochs = parse_int(key, value);
  } else if (key == "adapt_epochs") {
    config.adapt_epochs = parse_int(key, value);
  } else if (key == "learning_rate") {
    config.learning_rate = parse_double(key, value);
  } else if (key == "weight_decay") {
    config.weight_decay = parse_double(key, value);
  } else if (key == "beta") {
    config.beta = parse_double(key, value);
  } else if (key == "tau") {
    config.tau = parse_double(key, value);
  } else if (key == "zeta") {
    config.zeta = parse_double(key, value);
  } else if (key == "hop_radius") {
    config.hop_radius = parse_int(key, value);
  } else if (key == "embed_dim") {
    config.embed_dim = parse_int(key, value);
  } else if (key == "num_layers") {
    config.num_layers = parse_int(key, value);
  } else if (key == "pool_mode") {
    config.pool_mode = value;
  } else if (key == "seed") {
    config.seed = parse_uint64(key, value);
  } else {
    throw ConfigError("unknown key: " + key);
  }
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value, got \"" + line + "\"");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    }
    apply_config_entry(config, key, value);
  }
  return config;
}

void apply_config_file(TrainConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    apply_config_entry(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

TrainConfig load_config(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  TrainConfig config;
  if (const char* env_seed = std::getenv("SCGIB_SEED")) {
    config.seed = parse_uint64("SCGIB_SEED", env_seed);
  }
  if (!path.empty()) apply_config_file(config, path);
  for (const auto& [key, value] : overrides) {
    apply_config_entry(config, key, value);
  }
  return config;
}

void validate_config(const TrainConfig& config) {
  if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (config.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (config.adapt_epochs < 0) throw ConfigError("adapt_epochs must be >= 0");
  if (!(config.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (config.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (config.beta < 0.0) throw ConfigError("beta must be >= 0");
  if (!(config.tau > 0.0)) throw ConfigError("tau must be > 0");
  if (config.zeta < 0.0) throw ConfigError("zeta must be >= 0");
  if (config.hop_radius < 0) throw ConfigError("hop_radius must be >= 0");
  if (config.embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (config.num_layers < 1) throw ConfigError("num_layers must be >= 1");
  parse_pool_mode(config.pool_mode);
}

std::string config_to_text(const TrainConfig& config) {
  std::ostringstream out;
  out.precision(17);
  out << "batch_size = " << config.batch_size << "\n"
      << "epochs = " << config.epochs << "\n"
      << "adapt_epochs = " << config.adapt_epochs << "\n"
      << "learning_rate = " << config.learning_rate << "\n"
      << "weight_decay = " << config.weight_decay << "\n"
      << "beta = " << config.beta << "\n"
      << "tau = " << config.tau << "\n"
      << "zeta = " << config.zeta << "\n"
      << "hop_radius = " << config.hop_radius << "\n"
      << "embed_dim = " << config.embed_dim << "\n"
      << "num_layers = " << config.num_layers << "\n"
      << "pool_mode = \"" << config.pool_mode << "\"\n"
      << "seed = " << config.seed << "\n";
  return out.str();
}

}  // namespace scgib
