#include "cgan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cgan {

double mean_nll(const Generator& gen, const TokenIds& stream, const NllOptions& options) {
  if (stream.size() < 2) throw std::invalid_argument("perplexity: stream needs at least 2 tokens");
  const std::size_t window = options.window ? options.window : gen.config().bptt_len;
  const std::size_t vocab = gen.config().vocab_size;
  NoGradGuard no_grad;
  HiddenState state = gen.initial_state(1);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t start = 0; start + 1 < stream.size(); start += window) {
    const std::size_t len = std::min(window, stream.size() - 1 - start);
    std::span<const int> inputs(stream.data() + start, len);
    auto out = gen.forward(inputs, 1, len, state, ForwardOptions::eval());
    state = out.state;
    auto logp = log_softmax(reshape(out.logits, {len, vocab}));
    const auto& v = logp.values();
    for (std::size_t t = 0; t < len; ++t) {
      const int target = stream[start + t + 1];
      if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
        throw std::out_of_range("perplexity: token id " + std::to_string(target) + " outside vocabulary");
      }
      if (!options.include_unk && target == Vocabulary::kUnk) continue;
      total -= v[t * vocab + target];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("perplexity: no scored positions");
  return total / static_cast<double>(count);
}

double perplexity(const Generator& gen, const TokenIds& stream, const NllOptions& options) {
  return std::exp(mean_nll(gen, stream, options));
}

namespace {

template <typename Token>
double distinct_impl(const std::vector<std::vector<Token>>& samples, std::size_t n) {
  if (n == 0) throw std::invalid_argument("distinct_n: n must be positive");
  std::set<std::vector<Token>> unique;
  std::size_t total = 0;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      unique.emplace(s.begin() + i, s.begin() + i + n);
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("distinct_n: no " + std::to_string(n) + "-grams");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

}  // namespace

double distinct_n(const std::vector<TokenIds>& samples, std::size_t n) { return distinct_impl(samples, n); }

double distinct_n(const std::vector<std::vector<std::string>>& samples, std::size_t n) {
  return distinct_impl(samples, n);
}

std::vector<EvalReport> compare_report(const std::vector<ModelEntry>& models, const TokenIds& test_stream,
                                       const std::string& dataset_id, const SampleSettings& settings,
                                       const NllOptions& nll) {
  if (models.empty()) throw std::invalid_argument("compare_report: no models");
  for (const auto& m : models) {
    if (!m.generator || !m.vocab) throw std::invalid_argument("compare_report: model " + m.id + " incomplete");
    if (!(*m.vocab == *models.front().vocab)) {
      throw std::invalid_argument("compare_report: vocabulary of " + m.id + " differs from " + models.front().id);
    }
  }
  std::vector<EvalReport> rows;
  for (const auto& m : models) {
    EvalReport r;
    r.model_id = m.id;
    r.dataset_id = dataset_id;
    r.perplexity = perplexity(*m.generator, test_stream, nll);
    r.seed = settings.seed;
    if (settings.count > 0) {
      Rng rng(settings.seed);
      std::vector<TokenIds> samples;
      for (std::size_t i = 0; i < settings.count; ++i) {
        auto traj = sample_sequence(*m.generator, {Vocabulary::kBos}, settings.max_len, settings.temperature, rng);
        if (!traj.tokens.empty() && traj.tokens.back() == Vocabulary::kEos) traj.tokens.pop_back();
        samples.push_back(std::move(traj.tokens));
      }
      r.sample_count = samples.size();
      auto safe = [&](std::size_t n) {
        std::size_t grams = 0;
        for (const auto& s : samples) grams += s.size() >= n ? s.size() - n + 1 : 0;
        return grams ? distinct_n(samples, n) : 0.0;
      };
      r.distinct_1 = safe(1);
      r.distinct_2 = safe(2);
    }
    rows.push_back(std::move(r));
  }
  auto best = std::min_element(rows.begin(), rows.end(),
                               [](const EvalReport& a, const EvalReport& b) { return a.perplexity < b.perplexity; });
  best->best = true;
  return rows;
}

void write_report_jsonl(std::ostream& out, const std::vector<EvalReport>& rows) {
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["model_id"] = r.model_id;
    j["dataset_id"] = r.dataset_id;
    j["perplexity"] = r.perplexity;
    j["distinct_1"] = r.distinct_1;
    j["distinct_2"] = r.distinct_2;
    j["sample_count"] = r.sample_count;
    j["seed"] = r.seed;
    j["best"] = r.best;
    out << j.dump() << '\n';
  }
}

std::string format_report_table(const std::vector<EvalReport>& rows) {
  std::size_t model_w = 5, data_w = 7;
  for (const auto& r : rows) {
    model_w = std::max(model_w, r.model_id.size());
    data_w = std::max(data_w, r.dataset_id.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(model_w)) << "model" << "  " << std::setw(static_cast<int>(data_w))
     << "dataset" << "  " << std::right << std::setw(12) << "perplexity" << "  " << std::setw(10) << "distinct-1"
     << "  " << std::setw(10) << "distinct-2" << "  " << std::setw(7) << "samples" << "  best\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(model_w)) << r.model_id << "  "
       << std::setw(static_cast<int>(data_w)) << r.dataset_id << "  " << std::right << std::fixed
       << std::setprecision(4) << std::setw(12) << r.perplexity << "  " << std::setw(10) << r.distinct_1 << "  "
       << std::setw(10) << r.distinct_2 << "  " << std::setw(7) << r.sample_count << "  " << (r.best ? "*" : "")
       << '\n';
  }
  return os.str();
}

const std::vector<ReferencePerplexity>& reference_perplexities() {
  static const std::vector<ReferencePerplexity> rows{
      {"awd-lstm", "LM", "poetry", 50.73},
      {"awd-lstm", "LM", "metaphor", 63.59},
      {"awd-lstm", "LM", "lyrics", 20.08},
      {"awd-lstm", "GumbelGAN", "poetry", 55.03},
      {"awd-lstm", "GumbelGAN", "metaphor", 68.72},
      {"awd-lstm", "GumbelGAN", "lyrics", 22.19},
      {"awd-lstm", "Creative-GAN", "poetry", 49.40},
      {"awd-lstm", "Creative-GAN", "metaphor", 51.84},
      {"awd-lstm", "Creative-GAN", "lyrics", 17.11},
      {"transformer-xl", "LM", "poetry", 47.46},
      {"transformer-xl", "LM", "metaphor", 62.76},
      {"transformer-xl", "LM", "lyrics", 16.11},
      {"transformer-xl", "GumbelGAN", "poetry", 46.27},
      {"transformer-xl", "GumbelGAN", "metaphor", 63.43},
      {"transformer-xl", "GumbelGAN", "lyrics", 12.58},
      {"transformer-xl", "Creative-GAN", "poetry", 42.45},
      {"transformer-xl", "Creative-GAN", "metaphor", 65.35},
      {"transformer-xl", "Creative-GAN", "lyrics", 9.02},
  };
  return rows;
}

}  // namespace cgan
