#include "cgan/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace cgan {

const std::vector<ModelPreset>& model_presets() {
  static const std::vector<ModelPreset> presets{
      {"paper-awd-lstm", EncoderKind::lstm, 400, 3, 1150, 70},
      {"paper-transformer-xl", EncoderKind::transformer_xl, 410, 12, 2100, 150},
      {"desk-small", EncoderKind::lstm, 64, 2, 128, 35},
  };
  return presets;
}

const std::vector<TrainPreset>& train_presets() {
  static const std::vector<TrainPreset> presets{
      {"gutenberg-lm", Regime::mle, 20, 3e-3},
      {"poems-lm", Regime::mle, 8, 3e-3},
      {"metaphors-lm", Regime::mle, 8, 3e-4},
      {"lyrics-lm", Regime::mle, 15, 3e-4},
      {"poems-gan", Regime::creative_gan, 10, 3e-4},
      {"metaphors-gan", Regime::creative_gan, 10, 3e-4},
      {"lyrics-gan", Regime::creative_gan, 12, 3e-4},
      {"poems-gumbel", Regime::gumbel_gan, 10, 3e-4},
      {"metaphors-gumbel", Regime::gumbel_gan, 10, 3e-4},
      {"lyrics-gumbel", Regime::gumbel_gan, 12, 3e-4},
  };
  return presets;
}

std::string to_string(EncoderKind kind) { return kind == EncoderKind::lstm ? "lstm" : "transformer_xl"; }

RunConfig default_config() {
  RunConfig c;
  apply_preset(c, "desk-small");
  return c;
}

void apply_preset(RunConfig& config, std::string_view name) {
  for (const auto& p : model_presets()) {
    if (name == p.name) {
      config.model.encoder = p.encoder;
      config.model.embedding_size = p.embedding_size;
      config.model.num_layers = p.num_layers;
      config.model.hidden_size = p.hidden_size;
      config.model.bptt_len = p.bptt_len;
      return;
    }
  }
  for (const auto& p : train_presets()) {
    if (name == p.name) {
      config.train.regime = p.regime;
      config.train.epochs = p.epochs;
      config.train.learning_rate = p.learning_rate;
      return;
    }
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value, const char* what) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + std::string(key) + "' expects " + what + ", got '" + std::string(value) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("key '" + std::string(key) + "' expects true or false, got '" + std::string(value) + "'");
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Get>
Field size_field(const char* key, Get member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) {
            member(c) = parse_number<std::size_t>(key, v, "a non-negative integer");
          },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field double_field(const char* key, Get member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) { member(c) = parse_number<double>(key, v, "a number"); },
          [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field bool_field(const char* key, Get member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { member(c) = parse_bool(key, v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      {"model.encoder",
       [](RunConfig& c, std::string_view v) {
         if (v == "lstm") c.model.encoder = EncoderKind::lstm;
         else if (v == "transformer_xl") c.model.encoder = EncoderKind::transformer_xl;
         else throw ConfigError("key 'model.encoder' expects lstm or transformer_xl, got '" + std::string(v) + "'");
       },
       [](const RunConfig& c) { return to_string(c.model.encoder); }},
      size_field("model.vocab_size", [](RunConfig& c) -> std::size_t& { return c.model.vocab_size; }),
      size_field("model.embedding_size", [](RunConfig& c) -> std::size_t& { return c.model.embedding_size; }),
      size_field("model.hidden_size", [](RunConfig& c) -> std::size_t& { return c.model.hidden_size; }),
      size_field("model.num_layers", [](RunConfig& c) -> std::size_t& { return c.model.num_layers; }),
      size_field("model.bptt_len", [](RunConfig& c) -> std::size_t& { return c.model.bptt_len; }),
      double_field("model.dropout.embedding", [](RunConfig& c) -> double& { return c.model.dropouts.embedding; }),
      double_field("model.dropout.input", [](RunConfig& c) -> double& { return c.model.dropouts.input; }),
      double_field("model.dropout.hidden", [](RunConfig& c) -> double& { return c.model.dropouts.hidden; }),
      double_field("model.dropout.output", [](RunConfig& c) -> double& { return c.model.dropouts.output; }),
      double_field("model.dropout.weight_drop", [](RunConfig& c) -> double& { return c.model.dropouts.weight_drop; }),
      bool_field("disc.freeze_encoder", [](RunConfig& c) -> bool& { return c.disc.freeze_encoder; }),
      bool_field("disc.encoder_dropout", [](RunConfig& c) -> bool& { return c.disc.encoder_dropout; }),
      {"train.regime", [](RunConfig& c, std::string_view v) {
         try {
           c.train.regime = parse_regime(std::string(v));
         } catch (const std::invalid_argument& e) {
           throw ConfigError(std::string("key 'train.regime': ") + e.what());
         }
       },
       [](const RunConfig& c) { return to_string(c.train.regime); }},
      size_field("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; }),
      double_field("train.learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; }),
      double_field("train.disc_learning_rate", [](RunConfig& c) -> double& { return c.train.disc_learning_rate; }),
      size_field("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }),
      size_field("train.disc_steps_per_gen_step",
                 [](RunConfig& c) -> std::size_t& { return c.train.disc_steps_per_gen_step; }),
      size_field("train.rollout_count", [](RunConfig& c) -> std::size_t& { return c.train.rollout_count; }),
      double_field("train.gumbel_temperature", [](RunConfig& c) -> double& { return c.train.gumbel_temperature; }),
      double_field("train.gumbel_anneal", [](RunConfig& c) -> double& { return c.train.gumbel_anneal; }),
      double_field("train.gumbel_min_temperature",
                   [](RunConfig& c) -> double& { return c.train.gumbel_min_temperature; }),
      double_field("train.baseline_momentum", [](RunConfig& c) -> double& { return c.train.baseline_momentum; }),
      {"train.seed",
       [](RunConfig& c, std::string_view v) {
         c.train.seed = parse_number<std::uint64_t>("train.seed", v, "a non-negative integer");
       },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      double_field("train.mle_clip", [](RunConfig& c) -> double& { return c.train.mle_clip; }),
      double_field("train.gan_clip", [](RunConfig& c) -> double& { return c.train.gan_clip; }),
      size_field("train.gan_iters_per_epoch", [](RunConfig& c) -> std::size_t& { return c.train.gan_iters_per_epoch; }),
      size_field("train.lm_interleave", [](RunConfig& c) -> std::size_t& { return c.train.lm_interleave; }),
      double_field("train.divergence_factor", [](RunConfig& c) -> double& { return c.train.divergence_factor; }),
      double_field("train.sample_temperature", [](RunConfig& c) -> double& { return c.train.sample_temperature; }),
      {"corpus.min_freq",
       [](RunConfig& c, std::string_view v) { c.min_freq = parse_number<int>("corpus.min_freq", v, "an integer"); },
       [](const RunConfig& c) { return std::to_string(c.min_freq); }},
      size_field("corpus.max_vocab", [](RunConfig& c) -> std::size_t& { return c.max_vocab; }),
      {"corpus.split_seed",
       [](RunConfig& c, std::string_view v) {
         c.split_seed = parse_number<std::uint64_t>("corpus.split_seed", v, "a non-negative integer");
       },
       [](const RunConfig& c) { return std::to_string(c.split_seed); }},
  };
  return table;
}

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

}  // namespace

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  if (key == "preset") return apply_preset(config, value);
  for (const auto& f : fields()) {
    if (key == f.key) return f.set(config, value);
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

void apply_config_text(RunConfig& config, std::string_view text, const std::string& source) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value', got '" + std::string(line) + "'");
    try {
      apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig config = default_config();
  apply_config_text(config, text, source);
  return config;
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str(), path.string());
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig config = default_config();
  apply_config_file(config, path);
  return config;
}

std::string echo_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace cgan
