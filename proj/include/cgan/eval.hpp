#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cgan/generator.hpp"

namespace cgan {

struct NllOptions {
  /// Tokens per forward window; 0 uses the model's bptt_len. State is carried.
  std::size_t window = 0;
  /// Count positions whose target is <unk>.
  bool include_unk = true;
};

/// Mean natural-log NLL of stream[1..] given its history, eval mode.
double mean_nll(const Generator& gen, const TokenIds& stream, const NllOptions& options = {});
/// exp(mean_nll).
double perplexity(const Generator& gen, const TokenIds& stream, const NllOptions& options = {});

/// Unique n-grams / total n-grams, counted inside each sample (never across
/// sample boundaries).
double distinct_n(const std::vector<TokenIds>& samples, std::size_t n);
double distinct_n(const std::vector<std::vector<std::string>>& samples, std::size_t n);

struct EvalReport {
  std::string model_id;
  std::string dataset_id;
  double perplexity = 0;
  double distinct_1 = 0;
  double distinct_2 = 0;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
  bool best = false;
};

struct SampleSettings {
  std::size_t count = 100;
  std::size_t max_len = 30;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct ModelEntry {
  std::string id;
  const Generator* generator = nullptr;
  const Vocabulary* vocab = nullptr;
};

/// One row per model; the lowest perplexity gets best = true. All models
/// must share a vocabulary.
std::vector<EvalReport> compare_report(const std::vector<ModelEntry>& models, const TokenIds& test_stream,
                                       const std::string& dataset_id, const SampleSettings& samples,
                                       const NllOptions& nll = {});

void write_report_jsonl(std::ostream& out, const std::vector<EvalReport>& rows);
std::string format_report_table(const std::vector<EvalReport>& rows);

/// Full-scale perplexities from the original runs (AWD-LSTM and Transformer-XL
/// encoders on the real corpora). Reference only; not reproducible at desk scale.
struct ReferencePerplexity {
  const char* encoder;
  const char* model;
  const char* dataset;
  double perplexity;
};
const std::vector<ReferencePerplexity>& reference_perplexities();

}  // namespace cgan
