#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cgan/discriminator.hpp"
#include "cgan/training.hpp"

namespace cgan {

/// Everything a run needs. model.vocab_size 0 means "take it from the
/// vocabulary".
struct RunConfig {
  GeneratorConfig model;
  DiscriminatorConfig disc;
  TrainConfig train;
  int min_freq = 2;
  std::size_t max_vocab = 30000;
  std::uint64_t split_seed = 0;

  bool operator==(const RunConfig&) const = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelPreset {
  const char* name;
  EncoderKind encoder;
  std::size_t embedding_size;
  std::size_t num_layers;
  std::size_t hidden_size;
  std::size_t bptt_len;
};

struct TrainPreset {
  const char* name;
  Regime regime;
  std::size_t epochs;
  double learning_rate;
};

const std::vector<ModelPreset>& model_presets();
const std::vector<TrainPreset>& train_presets();

/// desk-small model with TrainConfig defaults.
RunConfig default_config();

/// Applies a model or training preset by name. Throws ConfigError if unknown.
void apply_preset(RunConfig& config, std::string_view name);
/// Sets one `key = value` pair. Throws ConfigError on an unknown key or a
/// malformed value.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

/// Line-oriented `key = value`; `#` starts a comment; `preset = name` applies
/// a preset at that point. Errors name `source:line`.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
/// Same syntax, layered over an existing config.
void apply_config_text(RunConfig& config, std::string_view text, const std::string& source = "<config>");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// Fully resolved config that parse_config reads back to an equal value.
std::string echo_config(const RunConfig& config);

std::string to_string(EncoderKind kind);

}  // namespace cgan
