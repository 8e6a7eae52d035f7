#include <cmath>

#include "cgan/discriminator.hpp"
#include "cgan/grad_check.hpp"
#include "doctest.h"

using namespace cgan;

namespace {

GeneratorConfig small_config(std::size_t vocab = 8) {
  GeneratorConfig c;
  c.vocab_size = vocab;
  c.embedding_size = 8;
  c.hidden_size = 6;
  c.num_layers = 2;
  c.bptt_len = 6;
  return c;
}

std::vector<Tensor> tensors(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

std::vector<double> snapshot(const ParamList& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

}  // namespace

TEST_CASE("concat_pool") {
  SUBCASE("hand computed") {
    Tensor h({1, 2, 2}, {1, 4, 3, 2});
    auto out = concat_pool(h);
    CHECK(std::vector<double>(out.values().begin(), out.values().end()) == std::vector<double>{3, 2, 3, 4, 2, 3});
  }
  SUBCASE("constant sequence") {
    Tensor h({1, 3, 2}, {0.5, -1, 0.5, -1, 0.5, -1});
    auto out = concat_pool(h);
    CHECK(std::vector<double>(out.values().begin(), out.values().end()) ==
          std::vector<double>{0.5, -1, 0.5, -1, 0.5, -1});
  }
  SUBCASE("single step") {
    Tensor h({2, 1, 2}, {1, 2, 3, 4});
    auto out = concat_pool(h);
    CHECK(std::vector<double>(out.values().begin(), out.values().end()) ==
          std::vector<double>{1, 2, 1, 2, 1, 2, 3, 4, 3, 4, 3, 4});
  }
  SUBCASE("masked: last means last non-pad position") {
    Tensor h({1, 3, 1}, {1, 5, 9});
    std::vector<std::size_t> len{2};
    auto out = concat_pool(h, len);
    CHECK(std::vector<double>(out.values().begin(), out.values().end()) == std::vector<double>{5, 5, 3});
  }
  SUBCASE("empty time axis") {
    Tensor h({1, 2, 1}, {1, 2});
    std::vector<std::size_t> len{0};
    CHECK_THROWS_AS(concat_pool(h, len), ShapeError);
  }
}

TEST_CASE("head widths taper geometrically") {
  CHECK(head_widths(64) == std::vector<std::size_t>{192, 64, 32, 16, 1});
}

TEST_CASE("init_from_generator") {
  Rng rng(1);
  Generator gen(small_config(), rng);
  auto disc = Discriminator::init_from_generator(gen, {}, rng);
  CHECK(disc.blocks.size() == 3);
  CHECK(disc.blocks[0].weight.dim(0) == 3 * disc.encoder_width());

  SUBCASE("encoder output equals the generator's eval encoder") {
    const std::vector<int> ids{2, 5, 6, 7, 2, 4, 4, 3};
    auto a = gen.encoder.forward(ids, 2, 4, gen.initial_state(2), nullptr);
    auto b = disc.encoder.forward(ids, 2, 4, disc.encoder.initial_state(2), nullptr);
    for (std::size_t i = 0; i < a.top.size(); ++i) CHECK(a.top.at(i) == b.top.at(i));
  }
  SUBCASE("training the discriminator leaves the generator bit-identical") {
    const auto before = snapshot(gen.parameters());
    auto params = disc.trainable_parameters();
    auto opt = AdamState::for_params(params, 1e-2);
    for (int step = 0; step < 3; ++step) {
      zero_grad(params);
      const std::vector<double> labels{1, 0};
      bce_with_logits(disc.logits({{2, 5, 6}, {2, 4}}, Mode::train), labels).backward();
      adam_step(params, opt);
    }
    CHECK(snapshot(gen.parameters()) == before);
    CHECK(snapshot(disc.parameters()) != snapshot(gen.parameters()));
  }
  SUBCASE("config mismatch") {
    auto other = small_config();
    other.hidden_size = 7;
    CHECK_THROWS_AS(Discriminator::init_from_generator(gen, {}, rng, other), std::invalid_argument);
  }
  SUBCASE("frozen encoder is excluded from trainable parameters") {
    auto frozen = Discriminator::init_from_generator(gen, {true, false}, rng);
    CHECK(frozen.trainable_parameters().size() == frozen.parameters().size() - gen.encoder.parameters().size());
  }
}

TEST_CASE("fresh head scores near one half on average") {
  Rng rng(2);
  Generator gen(small_config(20), rng);
  auto disc = Discriminator::init_from_generator(gen, {}, rng);
  std::vector<TokenIds> batch;
  for (int i = 0; i < 256; ++i) {
    TokenIds s{Vocabulary::kBos};
    const auto len = 1 + rng.index(8);
    for (std::size_t t = 0; t < len; ++t) s.push_back(4 + static_cast<int>(rng.index(16)));
    batch.push_back(s);
  }
  auto scores = disc.score_batch(batch);
  double mean = 0;
  for (double s : scores) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    mean += s / 256;
  }
  CHECK(mean > 0.3);
  CHECK(mean < 0.7);
}

TEST_CASE("discriminator passes grad_check over every parameter") {
  Rng rng(3);
  auto cfg = small_config(7);
  cfg.embedding_size = 4;
  cfg.hidden_size = 3;
  Generator gen(cfg, rng);
  auto disc = Discriminator::init_from_generator(gen, {}, rng);
  const std::vector<TokenIds> seqs{{2, 5, 6, 4}, {2, 4}, {2, 6, 6}};
  const std::vector<double> weights{0.7, -1.3, 0.4};
  for (Mode mode : {Mode::eval, Mode::train}) {
    auto f = [&] { return sum(apply_mask(sigmoid(disc.logits(seqs, mode)), weights)); };
    auto r = grad_check(f, tensors(disc.parameters()));
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("scoring") {
  Rng rng(4);
  Generator gen(small_config(10), rng);
  auto disc = Discriminator::init_from_generator(gen, {}, rng);
  SUBCASE("batch-1 train mode is an error, eval mode works") {
    CHECK_THROWS_AS(disc.logits({{2, 5}}, Mode::train), ShapeError);
    const double s = disc_score(disc, {2, 5});
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  SUBCASE("padding and masking match individual scoring") {
    const std::vector<TokenIds> seqs{{2, 5, 6, 7, 8, 3}, {2, 4}, {2, 9, 9, 9}};
    auto batched = disc.score_batch(seqs);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      CHECK(std::abs(batched[i] - disc_score(disc, seqs[i])) < 1e-8);
    }
  }
  SUBCASE("order matters") {
    CHECK(disc_score(disc, {2, 4, 5, 6}) != disc_score(disc, {2, 6, 5, 4}));
  }
  SUBCASE("soft one-hot inputs match token inputs") {
    const std::vector<TokenIds> seqs{{2, 5, 6}, {2, 7, 4}};
    std::vector<Tensor> probs;
    for (std::size_t t = 0; t < 3; ++t) {
      std::vector<double> v(2 * 10, 0.0);
      v[seqs[0][t]] = 1;
      v[10 + seqs[1][t]] = 1;
      probs.push_back(Tensor({2, 10}, v));
    }
    NoGradGuard ng;
    auto hard = disc.logits(seqs, Mode::eval);
    auto soft = disc.logits_soft(probs, {}, Mode::eval);
    for (std::size_t i = 0; i < 2; ++i) CHECK(soft.at(i) == doctest::Approx(hard.at(i)).epsilon(1e-12));
  }
}
