#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scgib/errors.hpp"

// Training configuration: published full-scale defaults, overridable by a
// flat key=value file and again by CLI flags.

namespace scgib {

struct TrainConfig {
  int batch_size = 128;
  int epochs = 600;
  int adapt_epochs = 50;
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double beta = 1.0;
  double tau = 1.0;
  double zeta = 0.0;
  int hop_radius = 2;
  int embed_dim = 64;
  int num_layers = 5;
  std::string pool_mode = "sum";
  std::uint64_t seed = 0;
};

// ConfigError on unknown keys or unparsable values.
void apply_config_entry(TrainConfig& config, const std::string& key, const std::string& value);

// Parses flat key=value text ("#" comments, blank lines, optional quotes
// around the value).
TrainConfig parse_config_text(const std::string& text);

// Applies every entry of a config file on top of `config`. IOError if the
// file cannot be read.
void apply_config_file(TrainConfig& config, const std::string& path);

// Resolution order: defaults, then SCGIB_SEED (seed only), then the file
// (empty path = skip), then overrides in list order.
TrainConfig load_config(const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& overrides = {});

// Range checks (positive sizes, tau > 0, zeta >= 0, known pool mode).
void validate_config(const TrainConfig& config);

std::string config_to_text(const TrainConfig& config);

}  // namespace scgib
