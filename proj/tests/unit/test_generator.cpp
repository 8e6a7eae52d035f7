#include <cmath>
#include <functional>
#include <numeric>

#include "cgan/generator.hpp"
#include "cgan/grad_check.hpp"
#include "doctest.h"

using namespace cgan;

namespace {

GeneratorConfig tiny_config(std::size_t vocab = 7, double dropout = 0.0) {
  GeneratorConfig c;
  c.vocab_size = vocab;
  c.embedding_size = 3;
  c.hidden_size = 4;
  c.num_layers = 2;
  c.bptt_len = 5;
  c.dropouts = {dropout, dropout, dropout, dropout, dropout};
  return c;
}

std::vector<Tensor> tensors(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void zero_all(Generator& gen) {
  for (auto& p : gen.parameters()) {
    for (auto& v : p.tensor.mutable_values()) v = 0.0;
  }
}

}  // namespace

TEST_CASE("config validation") {
  auto c = tiny_config();
  c.encoder = EncoderKind::transformer_xl;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.dropouts.input = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(tiny_config().layer_output(1) == 3);
  CHECK(tiny_config().layer_output(0) == 4);
}

TEST_CASE("logits shape and dropout-free train mode") {
  Rng rng(1);
  Generator gen(tiny_config(7), rng);
  const std::vector<int> ids{2, 5, 6, 2, 4, 4};
  auto eval = gen.forward(ids, 2, 3, gen.initial_state(2), ForwardOptions::eval());
  CHECK(eval.logits.shape() == Shape{2, 3, 7});
  CHECK(eval.top_states.shape() == Shape{2, 3, 3});
  Rng mask_rng(2);
  auto train = gen.forward(ids, 2, 3, gen.initial_state(2), ForwardOptions::train(), &mask_rng);
  for (std::size_t i = 0; i < eval.logits.size(); ++i) CHECK(train.logits.at(i) == eval.logits.at(i));
}

TEST_CASE("out of range ids are rejected") {
  Rng rng(1);
  Generator gen(tiny_config(7), rng);
  const std::vector<int> ids{2, 7};
  CHECK_THROWS_AS(gen.forward(ids, 1, 2, gen.initial_state(1), ForwardOptions::eval()), std::out_of_range);
}

TEST_CASE("LM cross-entropy passes grad_check over every parameter") {
  Rng rng(3);
  Generator gen(tiny_config(7, 0.3), rng);
  const std::vector<int> ids{2, 5, 6, 4, 2, 4, 4, 5};
  const std::vector<int> targets{5, 6, 4, 3, 4, 4, 5, 3};
  auto init = gen.initial_state(2);
  // A non-zero carried state exercises the recurrent paths from the start.
  for (auto* part : {&init.h, &init.c}) {
    for (auto& t : *part) {
      for (auto& v : t.mutable_values()) v = rng.uniform(-0.5, 0.5);
    }
  }
  for (ForwardOptions opts : {ForwardOptions::eval(), ForwardOptions::train()}) {
    auto loss = [&] {
      Rng masks(17);  // same masks on every evaluation
      return lm_loss(gen.forward(ids, 2, 4, init, opts, &masks), targets);
    };
    auto r = grad_check(loss, tensors(gen.parameters()));
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("sequence_log_prob") {
  SUBCASE("uniform logits") {
    Rng rng(4);
    Generator gen(tiny_config(10), rng);
    zero_all(gen);
    CHECK(sequence_log_prob(gen, {2, 7}) == doctest::Approx(-std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("requires bos") {
    Rng rng(4);
    Generator gen(tiny_config(10), rng);
    CHECK_THROWS_AS(sequence_log_prob(gen, {5, 7}), std::invalid_argument);
  }
  SUBCASE("enumeration over vocab 3 sums to one for lengths 1..3") {
    Rng rng(5);
    Generator gen(tiny_config(3), rng);
    for (std::size_t len = 1; len <= 3; ++len) {
      double total = 0;
      std::vector<int> seq(len, 0);
      std::function<void(std::size_t)> rec = [&](std::size_t pos) {
        if (pos == len) {
          TokenIds full{Vocabulary::kBos};
          full.insert(full.end(), seq.begin(), seq.end());
          total += std::exp(sequence_log_prob(gen, full));
          return;
        }
        for (int v = 0; v < 3; ++v) {
          seq[pos] = v;
          rec(pos + 1);
        }
      };
      rec(0);
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("carried hidden state matches a single long window") {
  Rng rng(6);
  Generator gen(tiny_config(8), rng);
  const std::vector<int> stream{2, 5, 6, 7, 4, 4, 5, 3, 2, 6};
  auto whole = gen.forward(stream, 1, 10, gen.initial_state(1), ForwardOptions::eval());
  auto first = gen.forward(std::span(stream).first(4), 1, 4, gen.initial_state(1), ForwardOptions::eval());
  auto second = gen.forward(std::span(stream).subspan(4), 1, 6, first.state, ForwardOptions::eval());
  const auto v = 8;
  for (std::size_t i = 0; i < 4 * v; ++i) CHECK(first.logits.at(i) == doctest::Approx(whole.logits.at(i)).epsilon(1e-12));
  for (std::size_t i = 0; i < 6 * v; ++i) {
    CHECK(second.logits.at(i) == doctest::Approx(whole.logits.at(4 * v + i)).epsilon(1e-12));
  }
  CHECK_FALSE(first.state.h[0].requires_grad());

  // log p of the whole stream is the sum over the two windows.
  auto window_lp = [&](const LmOutput& out, std::span<const int> targets, std::size_t n) {
    auto lp = pick(log_softmax(reshape(out.logits, {n, 8})), targets);
    return std::accumulate(lp.values().begin(), lp.values().end(), 0.0);
  };
  const std::vector<int> seq(stream.begin(), stream.begin() + 8);
  TokenIds bos_seq = seq;
  const double direct = sequence_log_prob(gen, bos_seq);
  auto w1 = gen.forward(std::span(seq).first(3), 1, 3, gen.initial_state(1), ForwardOptions::eval());
  auto w2 = gen.forward(std::span(seq).subspan(3, 4), 1, 4, w1.state, ForwardOptions::eval());
  const double windowed =
      window_lp(w1, std::span(seq).subspan(1, 3), 3) + window_lp(w2, std::span(seq).subspan(4, 4), 4);
  CHECK(windowed == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("weight tying") {
  Rng rng(7);
  Generator gen(tiny_config(6), rng);
  CHECK(gen.encoder.embedding.node() == gen.parameters()[0].tensor.node());
  // Perturbing row k moves both the input representation of k and the
  // output logit for k (measured when k is not the input).
  const int k = 4;
  auto logit_k = [&](int input) {
    const std::vector<int> ids{input};
    return gen.forward(ids, 1, 1, gen.initial_state(1), ForwardOptions::eval()).logits.at(k);
  };
  auto top_of = [&](int input) {
    const std::vector<int> ids{input};
    return gen.forward(ids, 1, 1, gen.initial_state(1), ForwardOptions::eval()).top_states.at(0);
  };
  const double eps = 1e-5;
  auto row = gen.encoder.embedding.mutable_values().subspan(k * 3, 3);
  const double base_logit = logit_k(5), base_top_k = top_of(k), base_top_other = top_of(5);
  row[0] += eps;
  const double d_logit = (logit_k(5) - base_logit) / eps;
  const double d_top_k = (top_of(k) - base_top_k) / eps;
  const double d_top_other = (top_of(5) - base_top_other) / eps;
  row[0] -= eps;
  CHECK(std::abs(d_logit) > 1e-6);      // output path
  CHECK(std::abs(d_top_k) > 1e-6);      // input path
  CHECK(d_top_other == 0.0);            // another token's input is unaffected
}

TEST_CASE("variational dropout masks are constant across time") {
  Rng rng(8);
  auto cfg = tiny_config(6);
  cfg.dropouts.output = 0.5;
  Generator gen(cfg, rng);
  const std::vector<int> ids{2, 5, 5, 4, 4, 5, 2, 4, 5, 5, 4, 4};
  Rng mask_rng(9);
  auto masks = DropoutMasks::draw(cfg, 2, ForwardOptions::train(), mask_rng);
  REQUIRE(masks.output.size() == 2 * 3);
  auto enc = gen.encoder.forward(ids, 2, 6, gen.initial_state(2), &masks);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double m = masks.output[b * 3 + j];
      for (std::size_t t = 0; t < 6; ++t) {
        const auto i = (b * 6 + t) * 3 + j;
        CHECK(enc.top_dropped.at(i) == doctest::Approx(enc.top.at(i) * m).epsilon(1e-15));
      }
    }
  }
  // Eval mode draws nothing.
  auto none = DropoutMasks::draw(cfg, 2, ForwardOptions::eval(), mask_rng);
  CHECK(none.output.empty());
  CHECK(none.weight.empty());
}

TEST_CASE("sampling") {
  Rng init(10);
  Generator gen(tiny_config(5), init);
  SUBCASE("tiny temperature is greedy") {
    Rng rng(1);
    auto t = sample_sequence(gen, {Vocabulary::kBos}, 6, 1e-9, rng);
    TokenIds seq{Vocabulary::kBos};
    for (std::size_t i = 0; i < t.tokens.size(); ++i) {
      NoGradGuard ng;
      auto out = gen.forward(seq, 1, seq.size(), gen.initial_state(1), ForwardOptions::eval());
      auto last = out.logits.values().subspan((seq.size() - 1) * 5, 5);
      const int best = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
      CHECK(t.tokens[i] == best);
      seq.push_back(best);
    }
  }
  SUBCASE("fixed seed is deterministic") {
    Rng a(77), b(77);
    auto ta = sample_sequence(gen, {Vocabulary::kBos}, 20, 1.0, a);
    auto tb = sample_sequence(gen, {Vocabulary::kBos}, 20, 1.0, b);
    CHECK(ta.tokens == tb.tokens);
    CHECK(ta.step_log_probs == tb.step_log_probs);
  }
  SUBCASE("recorded log-probs are the untempered policy") {
    Rng rng(5);
    for (double temp : {1.0, 0.5, 2.0}) {
      auto t = sample_sequence(gen, {Vocabulary::kBos}, 10, temp, rng);
      CHECK(t.step_log_probs.size() == t.tokens.size());
      const double sum = std::accumulate(t.step_log_probs.begin(), t.step_log_probs.end(), 0.0);
      CHECK(sum == doctest::Approx(sequence_log_prob(gen, t.full())).epsilon(1e-9));
    }
  }
  SUBCASE("stops at eos or max_len") {
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
      auto t = sample_sequence(gen, {Vocabulary::kBos}, 4, 1.0, rng);
      CHECK(t.tokens.size() <= 4);
      for (std::size_t j = 0; j + 1 < t.tokens.size(); ++j) CHECK(t.tokens[j] != Vocabulary::kEos);
    }
  }
  SUBCASE("bad arguments") {
    Rng rng(1);
    CHECK_THROWS(sample_sequence(gen, {Vocabulary::kBos}, 0, 1.0, rng));
    CHECK_THROWS(sample_sequence(gen, {Vocabulary::kBos}, 3, 0.0, rng));
  }
}

TEST_CASE("empirical unigram frequencies match softmax within TV 0.01") {
  Rng init(11);
  Generator gen(tiny_config(5), init);
  std::vector<double> probs(5);
  {
    NoGradGuard ng;
    const std::vector<int> bos{Vocabulary::kBos};
    auto sm = softmax(gen.forward(bos, 1, 1, gen.initial_state(1), ForwardOptions::eval()).logits);
    for (int j = 0; j < 5; ++j) probs[j] = sm.at(j);
  }
  Rng rng(12);
  const std::size_t n = 100000;
  auto draws = sample_batch(gen, {Vocabulary::kBos}, std::vector<std::size_t>(n, 1), 1.0, rng);
  std::vector<double> counts(5, 0.0);
  for (const auto& t : draws) counts[t.tokens[0]] += 1;
  double tv = 0;
  for (int j = 0; j < 5; ++j) tv += std::abs(counts[j] / n - probs[j]);
  CHECK(tv / 2 < 0.01);
}

TEST_CASE("rollout completion keeps the partial prefix") {
  Rng init(13);
  Generator gen(tiny_config(6), init);
  Rng rng(3);
  std::vector<TokenIds> partial{{2, 4, 5}, {2, 5, 3}};
  auto done = complete_batch(gen, partial, 1, 5, 1.0, rng);
  CHECK(std::equal(partial[0].begin(), partial[0].end(), done[0].begin()));
  CHECK(done[1] == partial[1]);  // already ended with eos
  CHECK(done[0].size() <= 6);
}

TEST_CASE("clone has independent storage") {
  Rng init(14);
  Generator gen(tiny_config(6), init);
  auto copy = gen.clone();
  copy.encoder.embedding.mutable_values()[0] += 1.0;
  CHECK(copy.encoder.embedding.at(0) != gen.encoder.embedding.at(0));
}
