#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cgan/corpus.hpp"
#include "cgan/ops.hpp"
#include "cgan/optim.hpp"
#include "cgan/rng.hpp"
#include "cgan/tensor.hpp"

namespace cgan {

enum class EncoderKind { lstm, transformer_xl };

struct DropoutConfig {
  double embedding = 0.1;    // whole word types
  double input = 0.65;       // embedding output, per sequence
  double hidden = 0.3;       // between LSTM layers, per sequence
  double output = 0.4;       // top layer output, per sequence
  double weight_drop = 0.5;  // recurrent matrices

  bool operator==(const DropoutConfig&) const = default;
};

struct GeneratorConfig {
  EncoderKind encoder = EncoderKind::lstm;
  std::size_t vocab_size = 0;
  std::size_t embedding_size = 64;
  std::size_t hidden_size = 128;
  std::size_t num_layers = 2;
  std::size_t bptt_len = 35;
  DropoutConfig dropouts;

  /// Width of layer l's output. The top layer emits embedding_size so the
  /// decoder can reuse the embedding matrix.
  std::size_t layer_output(std::size_t layer) const;
  std::size_t layer_input(std::size_t layer) const;
  void validate() const;

  bool operator==(const GeneratorConfig&) const = default;
};

enum class Mode { train, eval };

struct ForwardOptions {
  Mode mode = Mode::eval;
  /// Only meaningful in train mode.
  bool weight_drop = true;

  static ForwardOptions eval() { return {Mode::eval, false}; }
  static ForwardOptions train(bool weight_drop = true) { return {Mode::train, weight_drop}; }
};

/// Per-layer (h, c), each [batch, width].
struct HiddenState {
  std::vector<Tensor> h;
  std::vector<Tensor> c;

  std::size_t batch() const { return h.empty() ? 0 : h[0].dim(0); }
  HiddenState detached() const;
};

/// Masks drawn once per forward window, so each is constant across time.
struct DropoutMasks {
  std::vector<double> embedding_rows;              // [vocab]
  std::vector<double> input;                       // [batch x embedding]
  std::vector<std::vector<double>> hidden;         // per inner layer [batch x width]
  std::vector<double> output;                      // [batch x embedding]
  std::vector<std::vector<double>> weight;         // per layer, shape of w_hh

  static DropoutMasks draw(const GeneratorConfig& config, std::size_t batch, ForwardOptions options,
                           Rng& rng);
};

struct LstmLayer {
  Tensor w_ih;  // [in, 4*out], gate order i, f, g, o
  Tensor w_hh;  // [out, 4*out]
  Tensor bias;  // [4*out]
};

/// Embedding followed by stacked LSTM layers.
class LstmEncoder {
 public:
  LstmEncoder() = default;
  LstmEncoder(const GeneratorConfig& config, Rng& rng);

  LstmEncoder(LstmEncoder&&) = default;
  LstmEncoder& operator=(LstmEncoder&&) = default;
  LstmEncoder(const LstmEncoder&) = delete;
  LstmEncoder& operator=(const LstmEncoder&) = delete;

  /// Deep copy with independent storage.
  LstmEncoder clone() const;

  struct Output {
    Tensor top;         // [B, T, E], before output dropout
    Tensor top_dropped; // [B, T, E], after output dropout
    HiddenState state;  // detached
  };

  /// ids: row-major [batch x time].
  Output forward(std::span<const int> ids, std::size_t batch, std::size_t time,
                 const HiddenState& state, const DropoutMasks* masks) const;
  /// inputs: one [B, E] embedding per time step (for soft token mixtures).
  Output forward_embedded(const std::vector<Tensor>& inputs, const HiddenState& state,
                          const DropoutMasks* masks) const;
  /// Single step without any dropout. Updates `state` in place (with graph).
  Tensor step(const Tensor& input, HiddenState& state) const;

  /// Embedding rows for the given ids, or probs [B, V] x embedding.
  Tensor embed(std::span<const int> ids) const;
  Tensor embed_soft(const Tensor& probs) const;

  HiddenState initial_state(std::size_t batch) const;
  ParamList parameters(const std::string& prefix = "") const;
  const GeneratorConfig& config() const { return config_; }

  Tensor embedding;
  std::vector<LstmLayer> layers;

 private:
  Output run(Tensor x_time_major, std::size_t batch, std::size_t time, const HiddenState& state,
             const DropoutMasks* masks) const;

  GeneratorConfig config_;
};

struct LmOutput {
  Tensor logits;      // [B, T, V]
  Tensor top_states;  // [B, T, E], before output dropout
  HiddenState state;  // detached
};

/// Embedding -> stacked LSTM -> decoder that reuses the embedding matrix.
class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& config, Rng& rng);

  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  Generator clone() const;

  /// ids row-major [batch x time]. Train mode draws dropout masks from rng.
  LmOutput forward(std::span<const int> ids, std::size_t batch, std::size_t time,
                   const HiddenState& state, ForwardOptions options, Rng* rng = nullptr) const;
  /// Logits [N, V] from top-layer outputs [N, E].
  Tensor decode(const Tensor& top) const;

  HiddenState initial_state(std::size_t batch) const { return encoder.initial_state(batch); }
  ParamList parameters() const;
  const GeneratorConfig& config() const { return encoder.config(); }

  LstmEncoder encoder;
  Tensor decoder_bias;
};

/// Cross-entropy of a BPTT window: mean NLL over all positions.
Tensor lm_loss(const LmOutput& out, std::span<const int> targets);

/// Sum of log p(token_t | tokens_<t) over t >= 1, eval mode. The first token
/// must be <bos>.
double sequence_log_prob(const Generator& gen, const TokenIds& tokens);

struct Trajectory {
  TokenIds prefix;
  TokenIds tokens;                      // generated, excluding prefix
  std::vector<double> step_log_probs;   // untempered log p of each token
  double reward = 0;
  std::vector<double> per_step_rewards;
  double baseline_at_sample = 0;

  /// prefix followed by tokens.
  TokenIds full() const;
};

/// Draws each token from softmax(logits / temperature) until <eos> or
/// max_len tokens. temperature < 1e-6 means greedy argmax.
Trajectory sample_sequence(const Generator& gen, const TokenIds& prefix, std::size_t max_len,
                           double temperature, Rng& rng);
/// Batched form; row b stops after max_lens[b] tokens or at <eos>.
std::vector<Trajectory> sample_batch(const Generator& gen, const TokenIds& prefix,
                                     const std::vector<std::size_t>& max_lens, double temperature,
                                     Rng& rng);
/// Completes each given partial sequence (which already includes its
/// prefix) up to total_len generated tokens. Used for rollouts.
std::vector<TokenIds> complete_batch(const Generator& gen, const std::vector<TokenIds>& partial,
                                     std::size_t prefix_len, std::size_t total_len,
                                     double temperature, Rng& rng);

}  // namespace cgan
