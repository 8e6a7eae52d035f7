#include "cgan/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "cgan/eval.hpp"
#include "json.hpp"

namespace cgan {

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::mle: return "mle";
    case Regime::creative_gan: return "creative_gan";
    case Regime::gumbel_gan: return "gumbel_gan";
  }
  return "?";
}

Regime parse_regime(const std::string& text) {
  if (text == "mle") return Regime::mle;
  if (text == "creative_gan") return Regime::creative_gan;
  if (text == "gumbel_gan") return Regime::gumbel_gan;
  throw std::invalid_argument("unknown regime '" + text + "' (mle, creative_gan, gumbel_gan)");
}

double TrainConfig::gumbel_tau(std::size_t epoch) const {
  return std::max(gumbel_min_temperature, gumbel_temperature * std::pow(gumbel_anneal, static_cast<double>(epoch)));
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (!(disc_learning_rate >= 0)) fail("disc_learning_rate must be >= 0");
  if (batch_size == 0) fail("batch_size must be positive");
  if (regime != Regime::mle && disc_steps_per_gen_step < 1) fail("disc_steps_per_gen_step must be >= 1");
  if (!(gumbel_temperature > 0)) fail("gumbel_temperature must be positive");
  if (!(gumbel_anneal > 0 && gumbel_anneal <= 1)) fail("gumbel_anneal must be in (0, 1]");
  if (!(gumbel_min_temperature > 0)) fail("gumbel_min_temperature must be positive");
  if (!(baseline_momentum >= 0 && baseline_momentum < 1)) fail("baseline_momentum must be in [0, 1)");
  if (!(mle_clip > 0) || !(gan_clip > 0)) fail("clip norms must be positive");
  if (!(divergence_factor > 1)) fail("divergence_factor must exceed 1");
  if (!(sample_temperature >= 0)) fail("sample_temperature must be >= 0");
}

// ---- metrics ----

std::string MetricsLog::to_json_line(const MetricRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["perplexity"] = opt(r.perplexity);
  j["disc_accuracy"] = opt(r.disc_accuracy);
  j["mean_reward"] = opt(r.mean_reward);
  j["seed"] = r.seed;
  return j.dump();
}

void MetricsLog::append(const MetricRecord& record) {
  records_.push_back(record);
  if (sink_) *sink_ << to_json_line(record) << '\n' << std::flush;
}

std::string MetricsLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) out += to_json_line(r) + "\n";
  return out;
}

ParamSnapshot snapshot(const ParamList& params) {
  ParamSnapshot out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void restore(const ParamList& params, const ParamSnapshot& snap) {
  if (snap.size() != params.size()) throw std::invalid_argument("restore: snapshot does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto dst = t.mutable_values();
    if (dst.size() != snap[i].size()) throw std::invalid_argument("restore: size mismatch for " + params[i].name);
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

// ---- MLE ----

namespace {

double finite_or_throw(const Tensor& loss, const char* what) {
  const double v = loss.item();
  if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite loss");
  return v;
}

// One teacher-forced window. Returns the loss.
double mle_window(Generator& gen, ParamList& params, AdamState& opt, const BpttBatch& batch, HiddenState& state,
                  double clip, Rng& rng) {
  zero_grad(params);
  auto out = gen.forward(batch.inputs, batch.batch_size, batch.length, state, ForwardOptions::train(), &rng);
  state = out.state;
  auto loss = lm_loss(out, batch.targets);
  const double value = finite_or_throw(loss, "mle");
  loss.backward();
  clip_grad_norm(params, clip);
  adam_step(params, opt);
  return value;
}

}  // namespace

MleResult train_mle(Generator& gen, AdamState& opt, const TokenIds& train, const TokenIds& valid,
                    const TrainConfig& config, MetricsLog& log, Rng& rng, const std::string& phase) {
  config.validate();
  auto params = gen.parameters();
  const auto batches = make_bptt_batches(train, config.batch_size, gen.config().bptt_len);
  opt.learning_rate = config.learning_rate;

  MleResult result;
  result.best_valid_perplexity = std::numeric_limits<double>::infinity();
  ParamSnapshot best = snapshot(params);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    HiddenState state = gen.initial_state(config.batch_size);
    double total = 0;
    for (const auto& batch : batches) {
      try {
        total += mle_window(gen, params, opt, batch, state, config.mle_clip, rng);
      } catch (const NumericError& e) {
        restore(params, best);
        throw NumericError(std::string(e.what()) + " at " + phase + " epoch " + std::to_string(epoch + 1) +
                           "; last good parameters restored");
      }
      ++step;
    }
    const double train_loss = total / static_cast<double>(batches.size());
    const double ppl = perplexity(gen, valid);
    result.train_loss.push_back(train_loss);
    result.valid_perplexity.push_back(ppl);
    if (ppl < result.best_valid_perplexity) {
      result.best_valid_perplexity = ppl;
      result.best_epoch = epoch + 1;
      best = snapshot(params);
    }
    log.append({phase, epoch + 1, step, train_loss, ppl, std::nullopt, std::nullopt, config.seed});
  }
  restore(params, best);
  return result;
}

// ---- discriminator ----

DiscStepResult train_discriminator_on_batch(Discriminator& disc, AdamState& opt, const std::vector<TokenIds>& seqs,
                                            const std::vector<double>& labels, double clip, Rng& rng) {
  if (seqs.size() != labels.size()) throw std::invalid_argument("discriminator step: labels do not match batch");
  const bool has_real = std::any_of(labels.begin(), labels.end(), [](double l) { return l == 1.0; });
  const bool has_fake = std::any_of(labels.begin(), labels.end(), [](double l) { return l == 0.0; });
  if (!has_real || !has_fake) throw std::invalid_argument("discriminator step: batch needs both real and fake");
  auto all = disc.parameters();
  zero_grad(all);
  auto z = disc.logits(seqs, Mode::train, &rng);
  auto loss = bce_with_logits(z, labels);
  DiscStepResult r;
  r.loss = finite_or_throw(loss, "discriminator");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += (z.at(i) > 0) == (labels[i] > 0.5);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  loss.backward();
  auto params = disc.trainable_parameters();
  clip_grad_norm(params, clip);
  adam_step(params, opt);
  zero_grad(all);
  return r;
}

DiscStepResult train_discriminator_step(Discriminator& disc, AdamState& opt, const Generator& gen,
                                        const std::vector<TokenIds>& real, const TrainConfig& config, Rng& rng) {
  std::vector<std::size_t> lens;
  for (const auto& s : real) lens.push_back(std::max<std::size_t>(1, s.size() - 1));
  auto fakes = sample_batch(gen, {Vocabulary::kBos}, lens, config.sample_temperature, rng);
  std::vector<TokenIds> seqs = real;
  std::vector<double> labels(real.size(), 1.0);
  for (const auto& f : fakes) {
    seqs.push_back(f.full());
    labels.push_back(0.0);
  }
  return train_discriminator_on_batch(disc, opt, seqs, labels, config.gan_clip, rng);
}

// ---- policy gradient ----

void Baseline::update(double batch_mean) {
  if (!initialized) {
    value = batch_mean;
    initialized = true;
  } else {
    value = momentum * value + (1 - momentum) * batch_mean;
  }
}

Tensor policy_gradient_loss(const Generator& gen, const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw std::invalid_argument("policy gradient: empty batch");
  const auto batch = trajs.size();
  std::size_t time = 0;
  for (const auto& t : trajs) {
    if (t.prefix.empty()) throw std::invalid_argument("policy gradient: trajectory without prefix");
    time = std::max(time, t.prefix.size() + t.tokens.size() - 1);
  }
  if (time == 0) throw std::invalid_argument("policy gradient: no generated tokens");
  std::vector<int> inputs(batch * time, Vocabulary::kPad);
  std::vector<int> targets(batch * time, Vocabulary::kPad);
  std::vector<double> weights(batch * time, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& tr = trajs[b];
    const auto full = tr.full();
    if (!tr.per_step_rewards.empty() && tr.per_step_rewards.size() != tr.tokens.size()) {
      throw std::invalid_argument("policy gradient: per-step rewards do not match tokens");
    }
    for (std::size_t t = 0; t + 1 < full.size(); ++t) {
      inputs[b * time + t] = full[t];
      targets[b * time + t] = full[t + 1];
      if (t + 1 >= tr.prefix.size()) {
        const auto k = t + 1 - tr.prefix.size();
        const double r = tr.per_step_rewards.empty() ? tr.reward : tr.per_step_rewards[k];
        weights[b * time + t] = r - tr.baseline_at_sample;
      }
    }
  }
  auto out = gen.forward(inputs, batch, time, gen.initial_state(batch), ForwardOptions::eval());
  auto logp = pick(log_softmax(reshape(out.logits, {batch * time, gen.config().vocab_size})), targets);
  return scale(sum(apply_mask(logp, weights)), -1.0 / static_cast<double>(batch));
}

void rollout_rewards(const Generator& gen, std::vector<Trajectory>& trajs, std::size_t rollouts,
                     const RewardFn& reward, double temperature, Rng& rng) {
  for (std::size_t b = 0; b < trajs.size(); ++b) {
    auto& tr = trajs[b];
    const auto n = tr.tokens.size();
    tr.per_step_rewards.assign(n, tr.reward);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      TokenIds partial = tr.prefix;
      partial.insert(partial.end(), tr.tokens.begin(), tr.tokens.begin() + static_cast<std::ptrdiff_t>(k + 1));
      Rng child = rng.derive(b * 65536 + k);
      auto done = complete_batch(gen, std::vector<TokenIds>(rollouts, partial), tr.prefix.size(), n, temperature,
                                 child);
      auto scores = reward(done);
      double mean = 0;
      for (double s : scores) mean += s / static_cast<double>(scores.size());
      if (!std::isfinite(mean)) throw NumericError("rollout reward is not finite");
      tr.per_step_rewards[k] = mean;
    }
  }
}

GenStepResult creative_gan_generator_step(Generator& gen, AdamState& opt, const RewardFn& reward,
                                          const std::vector<std::size_t>& max_lens, const TrainConfig& config,
                                          Baseline& baseline, Rng& rng) {
  GenStepResult r;
  r.trajectories = sample_batch(gen, {Vocabulary::kBos}, max_lens, config.sample_temperature, rng);
  std::vector<TokenIds> full;
  for (const auto& t : r.trajectories) full.push_back(t.full());
  const auto scores = reward(full);
  if (scores.size() != full.size()) throw std::invalid_argument("reward function returned the wrong count");
  double mean = 0;
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("creative-gan step: reward is NaN");
    mean += s / static_cast<double>(scores.size());
  }
  if (!baseline.initialized) baseline.update(mean);
  for (std::size_t b = 0; b < full.size(); ++b) {
    r.trajectories[b].reward = scores[b];
    r.trajectories[b].baseline_at_sample = baseline.value;
  }
  if (config.rollout_count > 0) {
    rollout_rewards(gen, r.trajectories, config.rollout_count, reward, config.sample_temperature, rng);
  }
  auto params = gen.parameters();
  zero_grad(params);
  auto loss = policy_gradient_loss(gen, r.trajectories);
  r.loss = finite_or_throw(loss, "creative-gan");
  loss.backward();
  clip_grad_norm(params, config.gan_clip);
  adam_step(params, opt);
  zero_grad(params);
  baseline.update(mean);
  r.mean_reward = mean;
  return r;
}

// ---- Gumbel ----

Tensor gumbel_softmax_sample(const Tensor& log_probs, double tau, Rng& rng) {
  if (!(tau > 0)) throw std::invalid_argument("gumbel softmax: temperature must be positive");
  std::vector<double> g(log_probs.size());
  for (auto& x : g) x = -std::log(-std::log(rng.uniform_open()));
  return softmax(scale(add(log_probs, Tensor(log_probs.shape(), std::move(g))), 1.0 / tau));
}

GenStepResult gumbel_generator_step(Generator& gen, AdamState& opt, Discriminator& disc, std::size_t batch,
                                    std::size_t length, double tau, const TrainConfig& config, Rng& rng) {
  if (!(tau > 0)) throw std::invalid_argument("gumbel step: temperature must be positive");
  if (batch < 1 || length < 1) throw std::invalid_argument("gumbel step: empty batch");
  const auto vocab = gen.config().vocab_size;
  auto params = gen.parameters();
  auto disc_params = disc.parameters();
  zero_grad(params);
  zero_grad(disc_params);

  HiddenState state = gen.initial_state(batch);
  std::vector<double> bos(batch * vocab, 0.0);
  for (std::size_t b = 0; b < batch; ++b) bos[b * vocab + Vocabulary::kBos] = 1.0;
  std::vector<Tensor> soft{Tensor({batch, vocab}, std::move(bos))};
  Tensor input = gen.encoder.embed(std::vector<int>(batch, Vocabulary::kBos));
  for (std::size_t t = 0; t < length; ++t) {
    auto top = gen.encoder.step(input, state);
    auto y = gumbel_softmax_sample(log_softmax(gen.decode(top)), tau, rng);
    soft.push_back(y);
    input = gen.encoder.embed_soft(y);
  }
  auto scores = sigmoid(disc.logits_soft(soft, {}, Mode::eval));
  auto loss = scale(sum(scores), -1.0 / static_cast<double>(batch));
  GenStepResult r;
  r.loss = finite_or_throw(loss, "gumbel-gan");
  r.mean_reward = -r.loss;
  loss.backward();
  zero_grad(disc_params);
  clip_grad_norm(params, config.gan_clip);
  adam_step(params, opt);
  zero_grad(params);
  return r;
}

// ---- adversarial loop ----

std::vector<TokenIds> real_sequences(const std::vector<TokenIds>& docs, std::size_t max_len) {
  std::vector<TokenIds> out;
  for (const auto& d : docs) {
    if (d.empty()) continue;
    TokenIds s{Vocabulary::kBos};
    s.insert(s.end(), d.begin(), d.end());
    s.push_back(Vocabulary::kEos);
    if (s.size() > max_len + 1) s.resize(max_len + 1);
    out.push_back(std::move(s));
  }
  return out;
}

GanState GanState::init(const Generator& gen, const Discriminator& disc, const TrainConfig& config) {
  GanState s;
  s.gen_opt = AdamState::for_params(gen.parameters(), config.learning_rate);
  s.disc_opt = AdamState::for_params(disc.trainable_parameters(), config.disc_lr());
  s.baseline.momentum = config.baseline_momentum;
  return s;
}

namespace {

struct PairSnapshot {
  ParamSnapshot gen;
  ParamSnapshot disc;
  std::vector<BatchNormStats> stats;
};

PairSnapshot take(const Generator& gen, const Discriminator& disc) {
  PairSnapshot s{snapshot(gen.parameters()), snapshot(disc.parameters()), {}};
  for (const auto& b : disc.blocks) s.stats.push_back(b.stats);
  return s;
}

void put(Generator& gen, Discriminator& disc, const PairSnapshot& s) {
  restore(gen.parameters(), s.gen);
  restore(disc.parameters(), s.disc);
  for (std::size_t i = 0; i < disc.blocks.size(); ++i) disc.blocks[i].stats = s.stats[i];
}

std::vector<TokenIds> draw_batch(const std::vector<TokenIds>& docs, std::size_t n, Rng& rng) {
  std::vector<TokenIds> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(docs[rng.index(docs.size())]);
  return out;
}

}  // namespace

AdversarialResult adversarial_train(Generator& gen, Discriminator& disc, const AdversarialData& data,
                                    const TrainConfig& config, GanState& state, MetricsLog& log, Rng& rng,
                                    const EpochCallback& on_epoch) {
  config.validate();
  if (config.regime == Regime::mle) throw std::invalid_argument("adversarial_train: regime must be a GAN regime");
  if (data.train_docs.empty()) throw std::invalid_argument("adversarial_train: no training documents");
  for (const auto& d : data.train_docs) {
    if (d.size() < 2 || d[0] != Vocabulary::kBos) {
      throw std::invalid_argument("adversarial_train: real sequences must be <bos> plus at least one token");
    }
  }
  const std::size_t iters = config.gan_iters_per_epoch
                                ? config.gan_iters_per_epoch
                                : (data.train_docs.size() + config.batch_size - 1) / config.batch_size;
  state.gen_opt.learning_rate = config.learning_rate;
  state.disc_opt.learning_rate = config.disc_lr();
  state.baseline.momentum = config.baseline_momentum;

  std::vector<BpttBatch> lm_batches;
  if (config.lm_interleave > 0) lm_batches = make_bptt_batches(data.train_stream, config.batch_size, gen.config().bptt_len);

  AdversarialResult result;
  std::size_t step = log.size();
  if (state.epoch == 0 && state.start_perplexity == 0) {
    state.start_perplexity = perplexity(gen, data.valid_stream);
    state.best_perplexity = state.start_perplexity;
    log.append({"gan-start", 0, step, 0.0, state.start_perplexity, std::nullopt, std::nullopt, config.seed});
  }
  result.start_perplexity = state.start_perplexity;
  PairSnapshot best = take(gen, disc);
  auto gen_params = gen.parameters();

  for (std::size_t epoch = state.epoch; epoch < config.epochs; ++epoch) {
    const double tau = config.gumbel_tau(epoch);
    double acc_sum = 0, reward_sum = 0, gen_loss_sum = 0;
    std::size_t acc_n = 0;
    for (std::size_t it = 0; it < iters; ++it) {
      for (std::size_t d = 0; d < config.disc_steps_per_gen_step; ++d) {
        auto real = draw_batch(data.train_docs, config.batch_size, rng);
        auto r = train_discriminator_step(disc, state.disc_opt, gen, real, config, rng);
        result.schedule += 'D';
        acc_sum += r.accuracy;
        ++acc_n;
        log.append({"disc", epoch + 1, ++step, r.loss, std::nullopt, r.accuracy, std::nullopt, config.seed});
      }
      auto real = draw_batch(data.train_docs, config.batch_size, rng);
      GenStepResult g;
      if (config.regime == Regime::creative_gan) {
        std::vector<std::size_t> lens;
        for (const auto& s : real) lens.push_back(s.size() - 1);
        RewardFn reward = [&disc](const std::vector<TokenIds>& seqs) { return disc.score_batch(seqs); };
        g = creative_gan_generator_step(gen, state.gen_opt, reward, lens, config, state.baseline, rng);
      } else {
        const std::size_t length = real[rng.index(real.size())].size() - 1;
        g = gumbel_generator_step(gen, state.gen_opt, disc, config.batch_size, length, tau, config, rng);
      }
      result.schedule += 'G';
      ++state.gen_steps;
      reward_sum += g.mean_reward;
      gen_loss_sum += g.loss;
      log.append({"gen", epoch + 1, ++step, g.loss, std::nullopt, std::nullopt, g.mean_reward, config.seed});
      if (config.lm_interleave > 0 && state.gen_steps % config.lm_interleave == 0) {
        const auto& batch = lm_batches[(state.gen_steps / config.lm_interleave - 1) % lm_batches.size()];
        HiddenState h = gen.initial_state(batch.batch_size);
        const double loss = mle_window(gen, gen_params, state.gen_opt, batch, h, config.mle_clip, rng);
        log.append({"lm", epoch + 1, ++step, loss, std::nullopt, std::nullopt, std::nullopt, config.seed});
      }
    }
    const double ppl = perplexity(gen, data.valid_stream);
    const double acc = acc_sum / static_cast<double>(acc_n);
    result.valid_perplexity.push_back(ppl);
    result.disc_accuracy.push_back(acc);
    log.append({"gan-epoch", epoch + 1, step, gen_loss_sum / static_cast<double>(iters), ppl, acc,
                reward_sum / static_cast<double>(iters), config.seed});
    state.epoch = epoch + 1;
    if (ppl < state.best_perplexity) {
      state.best_perplexity = ppl;
      best = take(gen, disc);
    }
    if (ppl > config.divergence_factor * state.start_perplexity) {
      result.diverged = true;
      put(gen, disc, best);
      log.append({"diverged", epoch + 1, step, 0.0, ppl, std::nullopt, std::nullopt, config.seed});
      break;
    }
    if (on_epoch) on_epoch(epoch + 1, gen, disc, state);
  }
  result.best_perplexity = state.best_perplexity;
  return result;
}

}  // namespace cgan
