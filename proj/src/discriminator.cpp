#include "cgan/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cgan {

namespace {

Tensor uniform_param(Shape shape, double range, Rng& rng) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-range, range);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

Tensor concat_pool(const Tensor& hidden, std::span<const std::size_t> lengths) {
  if (hidden.rank() != 3) throw ShapeError("concat_pool", "expected [B,T,H], got " + shape_string(hidden.shape()));
  return concat({last_time(hidden, lengths), max_pool_time(hidden, lengths), mean_pool_time(hidden, lengths)}, 1);
}

std::vector<std::size_t> head_widths(std::size_t h) {
  return {3 * h, h, std::max<std::size_t>(1, h / 2), std::max<std::size_t>(1, h / 4), 1};
}

Discriminator Discriminator::init_from_generator(const Generator& gen, const DiscriminatorConfig& config,
                                                 Rng& rng, const std::optional<GeneratorConfig>& expected) {
  gen.config().validate();
  if (expected && !(*expected == gen.config())) {
    throw std::invalid_argument("init_from_generator: generator config does not match the discriminator's");
  }
  Discriminator d;
  d.config_ = config;
  d.encoder = gen.encoder.clone();
  const auto widths = head_widths(d.encoder_width());
  for (std::size_t k = 0; k + 2 < widths.size(); ++k) {
    const double range = 1.0 / std::sqrt(static_cast<double>(widths[k]));
    DenseBnBlock block;
    block.weight = uniform_param({widths[k], widths[k + 1]}, range, rng);
    block.bias = uniform_param({widths[k + 1]}, range, rng);
    block.gamma = Tensor::full({widths[k + 1]}, 1.0, true);
    block.beta = Tensor::zeros({widths[k + 1]}, true);
    block.stats = BatchNormStats(widths[k + 1]);
    d.blocks.push_back(std::move(block));
  }
  const auto last = widths[widths.size() - 2];
  const double range = 1.0 / std::sqrt(static_cast<double>(last));
  d.out_weight = uniform_param({last, 1}, range, rng);
  d.out_bias = uniform_param({1}, range, rng);
  return d;
}

Discriminator Discriminator::clone() const {
  Discriminator d;
  d.config_ = config_;
  d.encoder = encoder.clone();
  for (const auto& b : blocks) {
    d.blocks.push_back({b.weight.clone(true), b.bias.clone(true), b.gamma.clone(true), b.beta.clone(true), b.stats});
  }
  d.out_weight = out_weight.clone(true);
  d.out_bias = out_bias.clone(true);
  return d;
}

ParamList Discriminator::parameters() const {
  auto p = encoder.parameters("encoder.");
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const auto base = "head." + std::to_string(k) + ".";
    p.push_back({base + "weight", blocks[k].weight});
    p.push_back({base + "bias", blocks[k].bias});
    p.push_back({base + "gamma", blocks[k].gamma});
    p.push_back({base + "beta", blocks[k].beta});
  }
  p.push_back({"head.out.weight", out_weight});
  p.push_back({"head.out.bias", out_bias});
  return p;
}

ParamList Discriminator::trainable_parameters() const {
  auto all = parameters();
  if (!config_.freeze_encoder) return all;
  ParamList out;
  for (auto& p : all) {
    if (p.name.rfind("encoder.", 0) != 0) out.push_back(std::move(p));
  }
  return out;
}

Tensor Discriminator::head(const Tensor& hidden, std::span<const std::size_t> lengths, Mode mode) {
  Tensor x = concat_pool(hidden, lengths);
  if (x.dim(1) != 3 * encoder_width()) {
    throw ShapeError("discriminator", "head input width " + std::to_string(x.dim(1)) + " != 3 x " +
                                          std::to_string(encoder_width()));
  }
  for (auto& b : blocks) {
    x = relu(batch_norm(add_bias(matmul(x, b.weight), b.bias), b.gamma, b.beta, b.stats, mode == Mode::train));
  }
  x = add_bias(matmul(x, out_weight), out_bias);
  return reshape(x, {x.dim(0)});
}

Tensor Discriminator::logits(const std::vector<TokenIds>& seqs, Mode mode, Rng* rng) {
  if (seqs.empty()) throw ShapeError("discriminator", "empty batch");
  std::vector<std::size_t> lengths;
  std::size_t longest = 0;
  for (const auto& s : seqs) {
    if (s.empty()) throw ShapeError("discriminator", "empty sequence");
    lengths.push_back(s.size());
    longest = std::max(longest, s.size());
  }
  const auto batch = seqs.size();
  std::vector<int> ids(batch * longest, Vocabulary::kPad);
  for (std::size_t b = 0; b < batch; ++b) std::copy(seqs[b].begin(), seqs[b].end(), ids.begin() + b * longest);
  DropoutMasks masks;
  const bool drop = mode == Mode::train && config_.encoder_dropout;
  if (drop) {
    if (!rng) throw std::invalid_argument("discriminator: encoder dropout needs an rng");
    masks = DropoutMasks::draw(encoder.config(), batch, ForwardOptions::train(), *rng);
  }
  auto enc = encoder.forward(ids, batch, longest, encoder.initial_state(batch), drop ? &masks : nullptr);
  return head(enc.top, lengths, mode);
}

Tensor Discriminator::logits_soft(const std::vector<Tensor>& probs, std::span<const std::size_t> lengths,
                                  Mode mode) {
  if (probs.empty()) throw ShapeError("discriminator", "empty soft sequence");
  std::vector<Tensor> inputs;
  inputs.reserve(probs.size());
  for (const auto& p : probs) inputs.push_back(encoder.embed_soft(p));
  auto enc = encoder.forward_embedded(inputs, encoder.initial_state(probs[0].dim(0)), nullptr);
  return head(enc.top, lengths, mode);
}

std::vector<double> Discriminator::score_batch(const std::vector<TokenIds>& seqs) {
  NoGradGuard no_grad;
  auto z = sigmoid(logits(seqs, Mode::eval));
  std::vector<double> out(z.values().begin(), z.values().end());
  // Saturated logits still map strictly inside (0, 1).
  for (auto& s : out) s = std::clamp(s, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
  return out;
}

double disc_score(Discriminator& disc, const TokenIds& ids) { return disc.score_batch({ids}).front(); }

}  // namespace cgan
