#pragma once

#include <optional>
#include <vector>

#include "cgan/generator.hpp"

namespace cgan {

struct DiscriminatorConfig {
  /// Keep the copied encoder fixed during adversarial training.
  bool freeze_encoder = false;
  /// Apply the generator's dropout rates inside the encoder in train mode.
  bool encoder_dropout = false;

  bool operator==(const DiscriminatorConfig&) const = default;
};

/// [B,T,H] -> [B,3H] = [h_last | max_t h | mean_t h], honoring lengths.
Tensor concat_pool(const Tensor& hidden, std::span<const std::size_t> lengths = {});

/// Head widths for encoder width H: 3H -> H -> H/2 -> H/4 -> 1.
std::vector<std::size_t> head_widths(std::size_t encoder_width);

struct DenseBnBlock {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Tensor gamma;   // [out]
  Tensor beta;    // [out]
  BatchNormStats stats;
};

/// Real/fake scorer: LSTM encoder, concat pooling, three Dense+BatchNorm+ReLU
/// blocks, then a single sigmoid unit.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  /// Encoder weights are value copies of the generator's; the head is fresh.
  /// When `expected` is given, the generator config must match it.
  static Discriminator init_from_generator(const Generator& gen, const DiscriminatorConfig& config,
                                           Rng& rng,
                                           const std::optional<GeneratorConfig>& expected = std::nullopt);

  Discriminator clone() const;

  /// Pre-sigmoid scores [B] for token sequences (padded internally).
  Tensor logits(const std::vector<TokenIds>& seqs, Mode mode, Rng* rng = nullptr);
  /// Pre-sigmoid scores [B] for soft token distributions, one [B,V] per step.
  Tensor logits_soft(const std::vector<Tensor>& probs, std::span<const std::size_t> lengths, Mode mode);
  /// Eval-mode sigmoid scores.
  std::vector<double> score_batch(const std::vector<TokenIds>& seqs);

  ParamList parameters() const;
  /// parameters() minus the encoder when it is frozen.
  ParamList trainable_parameters() const;
  std::size_t encoder_width() const { return encoder.config().embedding_size; }
  const DiscriminatorConfig& config() const { return config_; }

  LstmEncoder encoder;
  std::vector<DenseBnBlock> blocks;
  Tensor out_weight;  // [H/4, 1]
  Tensor out_bias;    // [1]

 private:
  Tensor head(const Tensor& hidden, std::span<const std::size_t> lengths, Mode mode);

  DiscriminatorConfig config_;
};

/// sigmoid(head(concat_pool(encoder(ids)))) in eval mode.
double disc_score(Discriminator& disc, const TokenIds& ids);

}  // namespace cgan
