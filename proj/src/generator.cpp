#include "cgan/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgan {

namespace {

Tensor uniform_param(Shape shape, double range, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-range, range);
  return Tensor(std::move(shape), std::move(v), true);
}

std::vector<double> keep_mask(std::size_t n, double p, Rng& rng) {
  if (p <= 0) return {};
  std::vector<double> m(n);
  const double keep = 1.0 / (1.0 - p);
  for (auto& x : m) x = rng.bernoulli(p) ? 0.0 : keep;
  return m;
}

/// Repeats a [B x W] mask for every time step of a time-major [T*B, W] tensor.
std::vector<double> tile(const std::vector<double>& mask, std::size_t time) {
  std::vector<double> out;
  out.reserve(mask.size() * time);
  for (std::size_t t = 0; t < time; ++t) out.insert(out.end(), mask.begin(), mask.end());
  return out;
}

struct CellOut {
  Tensor h, c;
};

CellOut lstm_cell(const Tensor& gates, const Tensor& c_prev, std::size_t width) {
  auto i = sigmoid(slice(gates, 1, 0, width));
  auto f = sigmoid(slice(gates, 1, width, 2 * width));
  auto g = tanh(slice(gates, 1, 2 * width, 3 * width));
  auto o = sigmoid(slice(gates, 1, 3 * width, 4 * width));
  auto c = add(mul(f, c_prev), mul(i, g));
  return {mul(o, tanh(c)), c};
}

}  // namespace

std::size_t GeneratorConfig::layer_output(std::size_t layer) const {
  return layer + 1 == num_layers ? embedding_size : hidden_size;
}

std::size_t GeneratorConfig::layer_input(std::size_t layer) const {
  return layer == 0 ? embedding_size : hidden_size;
}

void GeneratorConfig::validate() const {
  if (encoder != EncoderKind::lstm) {
    throw std::invalid_argument("generator: only the lstm encoder is implemented");
  }
  if (vocab_size <= static_cast<std::size_t>(Vocabulary::kBos) || embedding_size == 0 || hidden_size == 0 ||
      num_layers == 0 || bptt_len == 0) {
    throw std::invalid_argument("generator: vocab_size must cover <bos> and all sizes must be positive");
  }
  for (double p : {dropouts.embedding, dropouts.input, dropouts.hidden, dropouts.output, dropouts.weight_drop}) {
    if (!(p >= 0 && p < 1)) throw std::invalid_argument("generator: dropout rates must lie in [0, 1)");
  }
}

HiddenState HiddenState::detached() const {
  HiddenState s;
  for (const auto& t : h) s.h.push_back(t.detach());
  for (const auto& t : c) s.c.push_back(t.detach());
  return s;
}

DropoutMasks DropoutMasks::draw(const GeneratorConfig& config, std::size_t batch,
                                ForwardOptions options, Rng& rng) {
  DropoutMasks m;
  if (options.mode == Mode::eval) return m;
  const auto& d = config.dropouts;
  m.embedding_rows = keep_mask(config.vocab_size, d.embedding, rng);
  m.input = keep_mask(batch * config.embedding_size, d.input, rng);
  for (std::size_t l = 0; l + 1 < config.num_layers; ++l) {
    m.hidden.push_back(keep_mask(batch * config.layer_output(l), d.hidden, rng));
  }
  m.output = keep_mask(batch * config.embedding_size, d.output, rng);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto out = config.layer_output(l);
    m.weight.push_back(options.weight_drop ? keep_mask(out * 4 * out, d.weight_drop, rng)
                                           : std::vector<double>{});
  }
  return m;
}

LstmEncoder::LstmEncoder(const GeneratorConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  embedding = uniform_param({config.vocab_size, config.embedding_size}, 0.1, rng);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto in = config.layer_input(l), out = config.layer_output(l);
    const double range = 1.0 / std::sqrt(static_cast<double>(out));
    LstmLayer layer;
    layer.w_ih = uniform_param({in, 4 * out}, range, rng);
    layer.w_hh = uniform_param({out, 4 * out}, range, rng);
    layer.bias = uniform_param({4 * out}, range, rng);
    layers.push_back(std::move(layer));
  }
}

LstmEncoder LstmEncoder::clone() const {
  LstmEncoder copy;
  copy.config_ = config_;
  copy.embedding = embedding.clone(embedding.requires_grad());
  for (const auto& l : layers) {
    copy.layers.push_back({l.w_ih.clone(l.w_ih.requires_grad()), l.w_hh.clone(l.w_hh.requires_grad()),
                           l.bias.clone(l.bias.requires_grad())});
  }
  return copy;
}

HiddenState LstmEncoder::initial_state(std::size_t batch) const {
  HiddenState s;
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    s.h.push_back(Tensor::zeros({batch, config_.layer_output(l)}));
    s.c.push_back(Tensor::zeros({batch, config_.layer_output(l)}));
  }
  return s;
}

ParamList LstmEncoder::parameters(const std::string& prefix) const {
  ParamList p{{prefix + "embedding", embedding}};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto base = prefix + "lstm." + std::to_string(l) + ".";
    p.push_back({base + "w_ih", layers[l].w_ih});
    p.push_back({base + "w_hh", layers[l].w_hh});
    p.push_back({base + "bias", layers[l].bias});
  }
  return p;
}

Tensor LstmEncoder::embed(std::span<const int> ids) const { return cgan::embedding(embedding, ids); }

Tensor LstmEncoder::embed_soft(const Tensor& probs) const { return matmul(probs, embedding); }

LstmEncoder::Output LstmEncoder::forward(std::span<const int> ids, std::size_t batch, std::size_t time,
                                         const HiddenState& state, const DropoutMasks* masks) const {
  if (ids.size() != batch * time || batch == 0 || time == 0) {
    throw ShapeError("lm_forward", "expected " + std::to_string(batch) + "x" + std::to_string(time) +
                                       " ids, got " + std::to_string(ids.size()));
  }
  std::vector<int> time_major(ids.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < time; ++t) {
      const int id = ids[b * time + t];
      if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
        throw std::out_of_range("lm_forward: token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(config_.vocab_size));
      }
      time_major[t * batch + b] = id;
    }
  }
  Tensor x = embed(time_major);
  if (masks && !masks->embedding_rows.empty()) {
    std::vector<double> rows(x.size());
    const auto width = config_.embedding_size;
    for (std::size_t i = 0; i < time_major.size(); ++i) {
      std::fill_n(rows.begin() + i * width, width, masks->embedding_rows[time_major[i]]);
    }
    x = apply_mask(x, rows);
  }
  return run(std::move(x), batch, time, state, masks);
}

LstmEncoder::Output LstmEncoder::forward_embedded(const std::vector<Tensor>& inputs, const HiddenState& state,
                                                  const DropoutMasks* masks) const {
  if (inputs.empty()) throw ShapeError("lm_forward", "empty input sequence");
  const auto batch = inputs[0].dim(0);
  return run(concat(inputs, 0), batch, inputs.size(), state, masks);
}

LstmEncoder::Output LstmEncoder::run(Tensor x, std::size_t batch, std::size_t time, const HiddenState& state,
                                     const DropoutMasks* masks) const {
  if (state.h.size() != layers.size() || state.batch() != batch) {
    throw ShapeError("lm_forward", "hidden state does not match batch " + std::to_string(batch) + " and " +
                                       std::to_string(layers.size()) + " layers");
  }
  if (masks && !masks->input.empty()) x = apply_mask(x, tile(masks->input, time));
  Output out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const auto width = config_.layer_output(l);
    const Tensor pre = add_bias(matmul(x, layer.w_ih), layer.bias);
    Tensor w_hh = layer.w_hh;
    if (masks && l < masks->weight.size() && !masks->weight[l].empty()) {
      w_hh = apply_mask(w_hh, masks->weight[l]);
    }
    Tensor h = state.h[l], c = state.c[l];
    std::vector<Tensor> outputs;
    outputs.reserve(time);
    for (std::size_t t = 0; t < time; ++t) {
      auto gates = add(slice(pre, 0, t * batch, (t + 1) * batch), matmul(h, w_hh));
      auto cell = lstm_cell(gates, c, width);
      h = cell.h;
      c = cell.c;
      outputs.push_back(h);
    }
    out.state.h.push_back(h.detach());
    out.state.c.push_back(c.detach());
    x = time == 1 ? outputs[0] : concat(outputs, 0);
    if (masks && l < masks->hidden.size() && !masks->hidden[l].empty()) {
      x = apply_mask(x, tile(masks->hidden[l], time));
    }
  }
  const auto width = config_.embedding_size;
  out.top = swap_leading(reshape(x, {time, batch, width}));
  out.top_dropped = out.top;
  if (masks && !masks->output.empty()) {
    out.top_dropped = swap_leading(reshape(apply_mask(x, tile(masks->output, time)), {time, batch, width}));
  }
  return out;
}

Tensor LstmEncoder::step(const Tensor& input, HiddenState& state) const {
  Tensor x = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    auto gates = add(add_bias(matmul(x, layer.w_ih), layer.bias), matmul(state.h[l], layer.w_hh));
    auto cell = lstm_cell(gates, state.c[l], config_.layer_output(l));
    state.h[l] = cell.h;
    state.c[l] = cell.c;
    x = cell.h;
  }
  return x;
}

Generator::Generator(const GeneratorConfig& config, Rng& rng) : encoder(config, rng) {
  decoder_bias = Tensor::zeros({config.vocab_size}, true);
}

Generator Generator::clone() const {
  Generator g;
  g.encoder = encoder.clone();
  g.decoder_bias = decoder_bias.clone(decoder_bias.requires_grad());
  return g;
}

ParamList Generator::parameters() const {
  auto p = encoder.parameters();
  p.push_back({"decoder.bias", decoder_bias});
  return p;
}

Tensor Generator::decode(const Tensor& top) const {
  return add_bias(matmul_nt(top, encoder.embedding), decoder_bias);
}

LmOutput Generator::forward(std::span<const int> ids, std::size_t batch, std::size_t time,
                            const HiddenState& state, ForwardOptions options, Rng* rng) const {
  DropoutMasks masks;
  if (options.mode == Mode::train) {
    if (!rng) throw std::invalid_argument("lm_forward: train mode needs an rng for dropout masks");
    masks = DropoutMasks::draw(config(), batch, options, *rng);
  }
  auto enc = encoder.forward(ids, batch, time, state, options.mode == Mode::train ? &masks : nullptr);
  const auto width = config().embedding_size;
  auto logits = decode(reshape(enc.top_dropped, {batch * time, width}));
  return {reshape(logits, {batch, time, config().vocab_size}), enc.top, std::move(enc.state)};
}

Tensor lm_loss(const LmOutput& out, std::span<const int> targets) {
  const auto vocab = out.logits.dim(2);
  return cross_entropy(reshape(out.logits, {out.logits.size() / vocab, vocab}), targets);
}

double sequence_log_prob(const Generator& gen, const TokenIds& tokens) {
  if (tokens.empty() || tokens[0] != Vocabulary::kBos) {
    throw std::invalid_argument("sequence_log_prob: sequence must start with <bos>");
  }
  if (tokens.size() == 1) return 0.0;
  NoGradGuard no_grad;
  const auto n = tokens.size() - 1;
  auto out = gen.forward(std::span(tokens).first(n), 1, n, gen.initial_state(1), ForwardOptions::eval());
  auto lp = pick(log_softmax(reshape(out.logits, {n, gen.config().vocab_size})),
                 std::span(tokens).subspan(1));
  double total = 0;
  for (double v : lp.values()) total += v;
  return total;
}

TokenIds Trajectory::full() const {
  TokenIds all = prefix;
  all.insert(all.end(), tokens.begin(), tokens.end());
  return all;
}

namespace {

/// Draws a token from one row of logits. Returns (token, untempered log p).
std::pair<int, double> draw_token(std::span<const double> logits, double temperature, Rng& rng) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double v : logits) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::size_t choice;
  if (temperature < 1e-6) {
    choice = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  } else {
    std::vector<double> w(logits.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::exp((logits[j] - mx) / temperature);
    choice = rng.categorical(w);
  }
  return {static_cast<int>(choice), logits[choice] - lse};
}

Tensor feed(const Generator& gen, const std::vector<int>& ids, HiddenState& state) {
  return gen.encoder.step(gen.encoder.embed(ids), state);
}

}  // namespace

std::vector<Trajectory> sample_batch(const Generator& gen, const TokenIds& prefix,
                                     const std::vector<std::size_t>& max_lens, double temperature,
                                     Rng& rng) {
  if (!(temperature > 0)) throw std::invalid_argument("sample: temperature must be positive");
  if (prefix.empty()) throw std::invalid_argument("sample: prefix must hold at least <bos>");
  for (auto len : max_lens) {
    if (len == 0) throw std::invalid_argument("sample: max_len must be >= 1");
  }
  const auto batch = max_lens.size();
  std::vector<Trajectory> out(batch);
  if (batch == 0) return out;
  NoGradGuard no_grad;
  for (auto& t : out) t.prefix = prefix;
  HiddenState state = gen.initial_state(batch);
  Tensor top;
  for (int id : prefix) top = feed(gen, std::vector<int>(batch, id), state);
  std::vector<bool> active(batch, true);
  const auto longest = *std::max_element(max_lens.begin(), max_lens.end());
  const auto vocab = gen.config().vocab_size;
  for (std::size_t step = 0; step < longest; ++step) {
    auto logits = gen.decode(top);
    std::vector<int> next(batch, Vocabulary::kEos);
    bool any = false;
    for (std::size_t b = 0; b < batch; ++b) {
      if (!active[b]) continue;
      auto [tok, lp] = draw_token(logits.values().subspan(b * vocab, vocab), temperature, rng);
      out[b].tokens.push_back(tok);
      out[b].step_log_probs.push_back(lp);
      next[b] = tok;
      if (tok == Vocabulary::kEos || out[b].tokens.size() >= max_lens[b]) active[b] = false;
      any = any || active[b];
    }
    if (!any) break;
    top = feed(gen, next, state);
  }
  return out;
}

Trajectory sample_sequence(const Generator& gen, const TokenIds& prefix, std::size_t max_len,
                           double temperature, Rng& rng) {
  return sample_batch(gen, prefix, {max_len}, temperature, rng).front();
}

std::vector<TokenIds> complete_batch(const Generator& gen, const std::vector<TokenIds>& partial,
                                     std::size_t prefix_len, std::size_t total_len, double temperature,
                                     Rng& rng) {
  std::vector<TokenIds> out = partial;
  if (partial.empty()) return out;
  const auto width = partial[0].size();
  for (const auto& p : partial) {
    if (p.size() != width || width == 0) throw std::invalid_argument("complete_batch: partials must share a length");
  }
  NoGradGuard no_grad;
  const auto batch = partial.size();
  HiddenState state = gen.initial_state(batch);
  Tensor top;
  for (std::size_t t = 0; t < width; ++t) {
    std::vector<int> ids(batch);
    for (std::size_t b = 0; b < batch; ++b) ids[b] = partial[b][t];
    top = feed(gen, ids, state);
  }
  std::vector<bool> active(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    active[b] = partial[b].back() != Vocabulary::kEos && width - prefix_len < total_len;
  }
  const auto vocab = gen.config().vocab_size;
  while (std::any_of(active.begin(), active.end(), [](bool a) { return a; })) {
    auto logits = gen.decode(top);
    std::vector<int> next(batch, Vocabulary::kEos);
    for (std::size_t b = 0; b < batch; ++b) {
      if (!active[b]) continue;
      next[b] = draw_token(logits.values().subspan(b * vocab, vocab), temperature, rng).first;
      out[b].push_back(next[b]);
      if (next[b] == Vocabulary::kEos || out[b].size() - prefix_len >= total_len) active[b] = false;
    }
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
    top = feed(gen, next, state);
  }
  return out;
}

}  // namespace cgan
