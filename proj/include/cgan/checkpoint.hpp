#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "cgan/config.hpp"

namespace cgan {

enum class Phase { pretrained, finetuned, gan };

std::string to_string(Phase phase);
Phase parse_phase(const std::string& text);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text header (magic, format_version, phase, section table with fixed-width
/// offsets) followed by little-endian binary sections.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  Phase phase = Phase::pretrained;
  RunConfig config;
  Vocabulary vocab;
  Generator generator;
  std::optional<Discriminator> discriminator;
  std::optional<AdamState> gen_opt;
  std::optional<AdamState> disc_opt;
  std::string rng_state;
  std::uint64_t metrics_cursor = 0;
  /// Adversarial progress; meaningful for the gan phase.
  Baseline baseline;
  std::uint64_t gan_epoch = 0;
  std::uint64_t gen_steps = 0;
  double start_perplexity = 0;
  double best_perplexity = 0;
};

void save_checkpoint(const Checkpoint& ckpt, std::ostream& out);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cgan
