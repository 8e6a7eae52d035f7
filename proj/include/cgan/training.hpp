#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cgan/discriminator.hpp"
#include "cgan/generator.hpp"

namespace cgan {

enum class Regime { mle, creative_gan, gumbel_gan };

std::string to_string(Regime regime);
Regime parse_regime(const std::string& text);

struct TrainConfig {
  Regime regime = Regime::mle;
  std::size_t epochs = 1;
  double learning_rate = 3e-4;
  /// 0 means "same as learning_rate".
  double disc_learning_rate = 0;
  std::size_t batch_size = 50;
  std::size_t disc_steps_per_gen_step = 3;
  std::size_t rollout_count = 0;
  double gumbel_temperature = 1.0;
  double gumbel_anneal = 0.9;
  double gumbel_min_temperature = 0.1;
  double baseline_momentum = 0.9;
  std::uint64_t seed = 0;
  double mle_clip = 0.25;
  double gan_clip = 1.0;
  /// Generator iterations per GAN epoch; 0 means one pass over the train docs.
  std::size_t gan_iters_per_epoch = 0;
  /// One teacher-forced LM batch after every K generator steps; 0 disables.
  std::size_t lm_interleave = 0;
  /// Halt when valid perplexity exceeds this multiple of its starting value.
  double divergence_factor = 5.0;
  double sample_temperature = 1.0;

  double disc_lr() const { return disc_learning_rate > 0 ? disc_learning_rate : learning_rate; }
  /// Temperature used during GAN epoch `epoch` (0-based).
  double gumbel_tau(std::size_t epoch) const;
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// One line of the append-only metrics log. Absent fields serialize as null.
struct MetricRecord {
  std::string phase;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0;
  std::optional<double> perplexity;
  std::optional<double> disc_accuracy;
  std::optional<double> mean_reward;
  std::uint64_t seed = 0;
};

class MetricsLog {
 public:
  MetricsLog() = default;
  /// Every appended record is also written (and flushed) to `sink`.
  explicit MetricsLog(std::ostream* sink) : sink_(sink) {}

  void append(const MetricRecord& record);
  const std::vector<MetricRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::string to_jsonl() const;
  static std::string to_json_line(const MetricRecord& record);

 private:
  std::vector<MetricRecord> records_;
  std::ostream* sink_ = nullptr;
};

/// Value copies of parameter storage, for best-so-far tracking.
using ParamSnapshot = std::vector<std::vector<double>>;
ParamSnapshot snapshot(const ParamList& params);
void restore(const ParamList& params, const ParamSnapshot& snap);

struct MleResult {
  double best_valid_perplexity = 0;
  std::size_t best_epoch = 0;
  std::vector<double> train_loss;        // per epoch
  std::vector<double> valid_perplexity;  // per epoch
};

/// Teacher-forced LM training with carried, detached BPTT state and
/// gradient-norm clipping. Parameters from the best valid epoch are restored
/// at the end. A non-finite loss restores the last good parameters and
/// throws NumericError. `phase` labels the metrics ("pretrain", "finetune").
MleResult train_mle(Generator& gen, AdamState& opt, const TokenIds& train, const TokenIds& valid,
                    const TrainConfig& config, MetricsLog& log, Rng& rng, const std::string& phase = "pretrain");

struct DiscStepResult {
  double loss = 0;
  double accuracy = 0;
};

/// One BCE step on explicit sequences and labels (1 real, 0 fake). Accuracy
/// is measured on the pre-update logits at threshold 0.5.
DiscStepResult train_discriminator_on_batch(Discriminator& disc, AdamState& opt, const std::vector<TokenIds>& seqs,
                                            const std::vector<double>& labels, double clip, Rng& rng);

/// Real batch against an equally sized fake batch sampled from `gen`, each
/// fake capped at the length of its real counterpart.
DiscStepResult train_discriminator_step(Discriminator& disc, AdamState& opt, const Generator& gen,
                                        const std::vector<TokenIds>& real, const TrainConfig& config, Rng& rng);

/// Exponential moving average of mean batch reward. The first batch sets it.
struct Baseline {
  double value = 0;
  bool initialized = false;
  double momentum = 0.9;

  void update(double batch_mean);
};

/// Scores complete sequences (each starting with <bos>) in (0, 1).
using RewardFn = std::function<std::vector<double>(const std::vector<TokenIds>&)>;

/// -1/B sum_b sum_t (R_bt - b) log p(token_bt) over generated tokens. Uses
/// per_step_rewards when present, else the terminal reward for every step.
Tensor policy_gradient_loss(const Generator& gen, const std::vector<Trajectory>& trajs);

/// Fills per_step_rewards by completing every proper prefix `rollouts` times.
void rollout_rewards(const Generator& gen, std::vector<Trajectory>& trajs, std::size_t rollouts,
                     const RewardFn& reward, double temperature, Rng& rng);

struct GenStepResult {
  double loss = 0;
  double mean_reward = 0;
  std::vector<Trajectory> trajectories;
};

/// Sample, score, REINFORCE with the baseline, then update the baseline.
GenStepResult creative_gan_generator_step(Generator& gen, AdamState& opt, const RewardFn& reward,
                                          const std::vector<std::size_t>& max_lens, const TrainConfig& config,
                                          Baseline& baseline, Rng& rng);

/// softmax((log_probs + g) / tau), g ~ Gumbel(0, 1). log_probs is [B, V].
Tensor gumbel_softmax_sample(const Tensor& log_probs, double tau, Rng& rng);

/// Relaxed rollout of `length` tokens fed back as soft embeddings and scored
/// by the discriminator in eval mode; loss = -mean score.
GenStepResult gumbel_generator_step(Generator& gen, AdamState& opt, Discriminator& disc, std::size_t batch,
                                    std::size_t length, double tau, const TrainConfig& config, Rng& rng);

struct AdversarialData {
  std::vector<TokenIds> train_docs;  // real sequences: <bos> doc <eos>, capped at bptt_len + 1
  TokenIds train_stream;             // for lm_interleave
  TokenIds valid_stream;
};

/// Wraps each document as <bos> doc <eos>, truncated to max_len + 1 tokens.
std::vector<TokenIds> real_sequences(const std::vector<TokenIds>& docs, std::size_t max_len);

struct GanState {
  AdamState gen_opt;
  AdamState disc_opt;
  Baseline baseline;
  std::size_t epoch = 0;  // epochs completed
  std::size_t gen_steps = 0;
  double start_perplexity = 0;
  double best_perplexity = 0;

  static GanState init(const Generator& gen, const Discriminator& disc, const TrainConfig& config);
};

struct AdversarialResult {
  std::string schedule;  // one 'D' or 'G' per step
  double start_perplexity = 0;
  double best_perplexity = 0;
  std::vector<double> valid_perplexity;
  std::vector<double> disc_accuracy;  // mean per epoch
  bool diverged = false;
};

using EpochCallback = std::function<void(std::size_t epoch, const Generator&, const Discriminator&, const GanState&)>;

/// disc_steps_per_gen_step discriminator steps then one generator step,
/// gan_iters_per_epoch times per epoch. Keeps the best-valid pair; on
/// divergence restores it and stops early.
AdversarialResult adversarial_train(Generator& gen, Discriminator& disc, const AdversarialData& data,
                                    const TrainConfig& config, GanState& state, MetricsLog& log, Rng& rng,
                                    const EpochCallback& on_epoch = {});

}  // namespace cgan
