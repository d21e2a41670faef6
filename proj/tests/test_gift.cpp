#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "giftlab/gift.hpp"
#include "giftlab/numerics.hpp"
#include "giftlab/tabular.hpp"
#include "giftlab/transformer.hpp"

using namespace giftlab;
using namespace giftlab::gift;
using giftlab::model::MicroTransformer;
using giftlab::model::PolicyModel;
using giftlab::model::TabularModel;
using giftlab::model::TokenSequence;
using giftlab::model::Vocabulary;

namespace {

Grid logprob_rows(const std::vector<std::vector<double>>& probs) {
  Grid g(static_cast<int>(probs.size()), static_cast<int>(probs[0].size()));
  for (int t = 0; t < g.rows(); ++t) {
    for (int v = 0; v < g.cols(); ++v) g.at(t, v) = std::log(probs[t][v]);
  }
  return g;
}

double grad_norm(const std::vector<double>& g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

// Finite-difference check for any loss closure over a model's parameters.
template <class LossFn>
void check_loss_gradient(PolicyModel& m, LossFn&& loss_fn, double tol) {
  const LossResult res = loss_fn(m);
  auto probe_fn = [&](std::span<const double> probe) {
    auto clone = m.clone();
    std::copy(probe.begin(), probe.end(), clone->params().begin());
    return loss_fn(*clone).loss;
  };
  const auto report = num::grad_check(probe_fn, m.params(), res.grads, 1e-6);
  CHECK(report.max_rel_error <= tol);
}

}  // namespace

TEST_CASE("gift_targets hand-computed rows") {
  // Uniform base over 3 tokens, oracle token 0, beta = ln 2.
  const Grid base = logprob_rows({{1.0 / 3, 1.0 / 3, 1.0 / 3}});
  const std::vector<int> oracle{0};
  const auto t = gift_targets(base, oracle, std::log(2.0));
  CHECK(t.rows.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.rows.at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.rows.at(0, 2) == doctest::Approx(0.25).epsilon(1e-12));

  // beta = 0 leaves the base untouched.
  const Grid skew = logprob_rows({{0.6, 0.3, 0.1}});
  const auto t0 = gift_targets(skew, oracle, 0.0);
  CHECK(t0.rows.at(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(t0.rows.at(0, 1) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(t0.rows.at(0, 2) == doctest::Approx(0.1).epsilon(1e-12));

  // base [0.7, 0.2, 0.1], oracle 2, beta = ln 10 -> [0.7, 0.2, 1.0] / 1.9.
  const Grid b2 = logprob_rows({{0.7, 0.2, 0.1}});
  const std::vector<int> oracle2{2};
  const auto t2 = gift_targets(b2, oracle2, std::log(10.0));
  CHECK(t2.rows.at(0, 0) == doctest::Approx(0.7 / 1.9).epsilon(1e-10));
  CHECK(t2.rows.at(0, 1) == doctest::Approx(0.2 / 1.9).epsilon(1e-10));
  CHECK(t2.rows.at(0, 2) == doctest::Approx(1.0 / 1.9).epsilon(1e-10));

  const std::vector<int> bad{5};
  CHECK_THROWS_AS(gift_targets(base, bad, 1.0), std::domain_error);
  CHECK_THROWS_AS(gift_targets(base, oracle, -1.0), std::invalid_argument);
}

TEST_CASE("gift_targets monotone sharpening in beta") {
  Rng rng(404);
  const std::vector<double> betas{0.0, 1.0, 2.0, 5.0, 10.0, 50.0};
  for (int trial = 0; trial < 200; ++trial) {
    const int vocab = 2 + rng.below(5);
    std::vector<double> z(vocab);
    for (double& x : z) x = 3.0 * rng.normal();
    const auto base_probs = num::softmax(z);
    const auto base_lp = num::log_softmax(z);
    Grid row(1, vocab);
    for (int v = 0; v < vocab; ++v) row.at(0, v) = base_lp[v];
    const std::vector<int> oracle{rng.below(vocab)};

    double prev = -1.0;
    for (double beta : betas) {
      const auto t = gift_targets(row, oracle, beta);
      const double p_oracle = t.rows.at(0, oracle[0]);
      CHECK(p_oracle > prev);
      if (beta == 0.0) CHECK(p_oracle == doctest::Approx(base_probs[oracle[0]]).epsilon(1e-12));
      if (beta == 50.0) CHECK(p_oracle > 1.0 - 1e-6);
      prev = p_oracle;
    }
  }
}

TEST_CASE("gift_targets preserves off-oracle ratios and commutes with permutations") {
  Rng rng(808);
  for (int trial = 0; trial < 1000; ++trial) {
    const int vocab = 3 + rng.below(4);
    std::vector<double> z(vocab);
    for (double& x : z) x = 3.0 * rng.normal();
    const auto lp = num::log_softmax(z);
    const auto bp = num::softmax(z);
    Grid row(1, vocab);
    for (int v = 0; v < vocab; ++v) row.at(0, v) = lp[v];
    const int oracle = rng.below(vocab);
    const double beta = 10.0 * rng.uniform();
    const auto t = gift_targets(row, std::vector<int>{oracle}, beta);

    for (int u = 0; u < vocab; ++u) {
      for (int w = 0; w < vocab; ++w) {
        if (u == oracle || w == oracle || u == w) continue;
        const double target_ratio = t.rows.at(0, u) / t.rows.at(0, w);
        const double base_ratio = bp[u] / bp[w];
        CHECK(std::abs(target_ratio - base_ratio) <= 1e-10 * std::max(1.0, base_ratio));
      }
    }

    // permutation equivariance
    std::vector<int> perm(vocab);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Grid prow(1, vocab);
    for (int v = 0; v < vocab; ++v) prow.at(0, perm[v]) = lp[v];
    int poracle = perm[oracle];
    const auto tp = gift_targets(prow, std::vector<int>{poracle}, beta);
    for (int v = 0; v < vocab; ++v) {
      CHECK(tp.rows.at(0, perm[v]) == doctest::Approx(t.rows.at(0, v)).epsilon(1e-12));
    }
  }
}

TEST_CASE("gift_loss at beta 0 with model = base is pure distillation fixed point") {
  Rng rng(55);
  TabularModel base(4, 1, 3);
  for (double& p : base.params()) p = 0.7 * rng.normal();
  TabularModel m = base;

  std::vector<TokenSequence> batch{{{0}, {1, 2, 3}}, {{2}, {0, 3}}};
  GiftConfig cfg;
  cfg.beta = 0.0;
  const auto res = gift_loss(m, base, batch, cfg);

  // Loss equals the mean per-token entropy of the base distribution.
  double expected = 0.0;
  int n = 0;
  for (const auto& seq : batch) {
    const auto joined = seq.joined();
    const Grid logits = base.forward(joined);
    for (std::size_t j = seq.prompt.size(); j < joined.size(); ++j) {
      expected += num::entropy(num::softmax(logits.row_span(static_cast<int>(j) - 1)));
      n++;
    }
  }
  expected /= n;
  CHECK(res.loss == doctest::Approx(expected).epsilon(1e-12));
  CHECK(grad_norm(res.grads) <= 1e-8);
}

TEST_CASE("gift_loss at beta 50 matches sft_loss") {
  Rng rng(66);
  TabularModel base(5, 1, 4);
  for (double& p : base.params()) p = 0.5 * rng.normal();
  TabularModel m(5, 1, 4);
  for (double& p : m.params()) p = 0.5 * rng.normal();

  std::vector<TokenSequence> batch{{{0}, {1, 2, 4}}, {{3}, {2, 4}}, {{1}, {0, 0, 3, 4}}};
  GiftConfig cfg;
  cfg.beta = 50.0;
  const auto gift_res = gift_loss(m, base, batch, cfg);
  const auto sft_res = sft_loss(m, batch);
  CHECK(std::abs(gift_res.loss - sft_res.loss) < 1e-4);
}

TEST_CASE("gift_loss single-position hand value") {
  TabularModel base(3, 1, 2);  // zero table: uniform
  TabularModel m(3, 1, 2);
  std::vector<TokenSequence> batch{{{1}, {0}}};
  GiftConfig cfg;
  cfg.beta = std::log(2.0);
  const auto res = gift_loss(m, base, batch, cfg);
  CHECK(res.loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  CHECK_THROWS_AS(gift_loss(m, base, std::vector<TokenSequence>{}, cfg), std::domain_error);
}

TEST_CASE("sft_loss values") {
  // Model assigning (near) probability 1 to every oracle token.
  TabularModel sharp(4, 1, 3);
  std::vector<TokenSequence> batch{{{0}, {1, 2}}};
  // Margin 50 toward the oracle token from each context on the path.
  auto set_sharp = [&](std::vector<int> ctx, int tok) {
    const int row = sharp.row_index(ctx);
    sharp.params()[static_cast<std::size_t>(row) * 4 + tok] = 50.0;
  };
  set_sharp({0}, 1);
  set_sharp({1}, 2);
  CHECK(sft_loss(sharp, batch).loss == doctest::Approx(0.0).epsilon(1e-9));

  TabularModel uniform(4, 1, 3);
  CHECK(sft_loss(uniform, batch).loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("entropy_reg_loss values and disabled limit") {
  Rng rng(77);
  TabularModel m(4, 1, 3);
  for (double& p : m.params()) p = 0.4 * rng.normal();
  std::vector<TokenSequence> batch{{{0}, {1, 2, 3}}};

  const auto plain = sft_loss(m, batch);
  const auto reg0 = entropy_reg_loss(m, batch, 0.0);
  CHECK(reg0.loss == doctest::Approx(plain.loss).epsilon(1e-15));
  for (std::size_t i = 0; i < plain.grads.size(); ++i) {
    CHECK(reg0.grads[i] == doctest::Approx(plain.grads[i]).epsilon(1e-15));
  }

  TabularModel uniform(4, 1, 3);
  const auto reg = entropy_reg_loss(uniform, batch, 0.01);
  CHECK(reg.loss == doctest::Approx(std::log(4.0) - 0.01 * std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("label_smoothing_loss values") {
  Rng rng(88);
  TabularModel m(4, 1, 3);
  for (double& p : m.params()) p = 0.4 * rng.normal();
  std::vector<TokenSequence> batch{{{0}, {1, 2}}};

  const auto plain = sft_loss(m, batch);
  const auto ls0 = label_smoothing_loss(m, batch, 0.0);
  CHECK(ls0.loss == doctest::Approx(plain.loss).epsilon(1e-15));

  // vocab 2, eps = 0.5, oracle 0 -> target [0.75, 0.25]
  TabularModel m2(2, 1, 1);
  m2.params() = {std::log(0.8), std::log(0.2), std::log(0.8), std::log(0.2),
                 std::log(0.8), std::log(0.2)};
  std::vector<TokenSequence> batch2{{{1}, {0}}};
  const auto ls = label_smoothing_loss(m2, batch2, 0.5);
  const double expected = -0.75 * std::log(0.8) - 0.25 * std::log(0.2);
  CHECK(ls.loss == doctest::Approx(expected).epsilon(1e-12));

  // Uniform model makes the target mixture irrelevant.
  TabularModel uniform(4, 1, 3);
  CHECK(label_smoothing_loss(uniform, batch, 0.01).loss ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  CHECK_THROWS_AS(label_smoothing_loss(m, batch, 1.0), std::invalid_argument);
}

TEST_CASE("kd_loss values") {
  Rng rng(99);
  TabularModel base(4, 1, 3);
  for (double& p : base.params()) p = 0.6 * rng.normal();
  TabularModel m(4, 1, 3);
  for (double& p : m.params()) p = 0.6 * rng.normal();
  std::vector<TokenSequence> batch{{{0}, {1, 2, 3}}};

  const auto plain = sft_loss(m, batch);
  const auto kd0 = kd_loss(m, base, batch, 0.0);
  CHECK(kd0.loss == doctest::Approx(plain.loss).epsilon(1e-15));

  TabularModel m_as_base = base;
  const auto kd_fixed = kd_loss(m_as_base, base, batch, 0.1);
  CHECK(kd_fixed.loss == doctest::Approx(sft_loss(m_as_base, batch).loss).epsilon(1e-12));
}

TEST_CASE("all losses pass finite-difference checks on a micro-transformer") {
  Rng rng(4242);
  Vocabulary voc(7, 4, 5, 6);
  MicroTransformer m(voc, {.width = 12, .heads = 2, .layers = 1, .context = 10}, 77);
  MicroTransformer base(voc, {.width = 12, .heads = 2, .layers = 1, .context = 10}, 177);
  std::vector<TokenSequence> batch{{{4, 0}, {1, 2, 5}}, {{4, 3}, {0, 5}}};

  check_loss_gradient(m, [&](PolicyModel& pm) { return sft_loss(pm, batch); }, 1e-4);
  check_loss_gradient(
      m,
      [&](PolicyModel& pm) {
        GiftConfig cfg;
        cfg.beta = 2.5;
        return gift_loss(pm, base, batch, cfg);
      },
      1e-4);
  check_loss_gradient(m, [&](PolicyModel& pm) { return entropy_reg_loss(pm, batch, 0.01); }, 1e-4);
  check_loss_gradient(m, [&](PolicyModel& pm) { return label_smoothing_loss(pm, batch, 0.1); },
                      1e-4);
  check_loss_gradient(m, [&](PolicyModel& pm) { return kd_loss(pm, base, batch, 0.1); }, 1e-4);
}

TEST_CASE("losses pass finite-difference checks on tabular models") {
  Rng rng(808);
  TabularModel m(5, 1, 4);
  TabularModel base(5, 1, 4);
  for (double& p : m.params()) p = 0.5 * rng.normal();
  for (double& p : base.params()) p = 0.5 * rng.normal();
  std::vector<TokenSequence> batch{{{0}, {1, 2, 4}}, {{3}, {2, 4}}};

  check_loss_gradient(m, [&](PolicyModel& pm) { return sft_loss(pm, batch); }, 1e-7);
  check_loss_gradient(
      m,
      [&](PolicyModel& pm) {
        GiftConfig cfg;
        cfg.beta = 1.0;
        return gift_loss(pm, base, batch, cfg);
      },
      1e-7);
  check_loss_gradient(m, [&](PolicyModel& pm) { return entropy_reg_loss(pm, batch, 0.05); }, 1e-7);
  check_loss_gradient(m, [&](PolicyModel& pm) { return label_smoothing_loss(pm, batch, 0.3); },
                      1e-7);
  check_loss_gradient(m, [&](PolicyModel& pm) { return kd_loss(pm, base, batch, 0.2); }, 1e-7);
}

TEST_CASE("beta 0 distillation converges back onto the base distribution") {
  Rng rng(321);
  TabularModel base(4, 1, 3);
  for (double& p : base.params()) p = 0.8 * rng.normal();
  TabularModel m(4, 1, 3);  // start away from base (uniform)

  std::vector<TokenSequence> train{{{0}, {1, 2, 3}}, {{1}, {0, 3}}, {{2}, {2, 1, 3}}};
  std::vector<TokenSequence> validation{{{0}, {2, 3}}, {{1}, {1, 3}}};
  GiftConfig cfg;
  cfg.beta = 0.0;

  auto state = giftlab::model::OptimizerState::for_model(m, 0.05, 0.0);
  for (int step = 0; step < 2000; ++step) {
    const auto res = gift_loss(m, base, train, cfg);
    giftlab::model::apply_update(m, res.grads, state);
  }

  // Mean total variation to the base on validation prefixes.
  double tv = 0.0;
  int n = 0;
  for (const auto& seq : validation) {
    const auto joined = seq.joined();
    const Grid lm = m.forward(joined);
    const Grid lb = base.forward(joined);
    for (std::size_t j = seq.prompt.size(); j < joined.size(); ++j) {
      const int row = static_cast<int>(j) - 1;
      tv += num::total_variation(num::softmax(lm.row_span(row)), num::softmax(lb.row_span(row)));
      n++;
    }
  }
  CHECK(tv / n < 0.01);
}

TEST_CASE("gift_loss lower bound: mean target entropy, attained at the optimum") {
  Rng rng(123);
  TabularModel base(4, 1, 3);
  for (double& p : base.params()) p = 0.5 * rng.normal();
  TabularModel m(4, 1, 3);
  std::vector<TokenSequence> batch{{{0}, {1, 2, 3}}, {{2}, {3}}};
  GiftConfig cfg;
  cfg.beta = 1.5;

  // Mean target entropy from the frozen targets.
  double target_entropy = 0.0;
  int n = 0;
  for (const auto& seq : batch) {
    const auto joined = seq.joined();
    const Grid logits = base.forward(joined);
    for (std::size_t j = seq.prompt.size(); j < joined.size(); ++j) {
      Grid row(1, 4);
      num::log_softmax_into(logits.row_span(static_cast<int>(j) - 1), row.row_span(0));
      const auto t = gift_targets(row, std::vector<int>{joined[j]}, cfg.beta);
      target_entropy += num::entropy(t.rows.row_span(0));
      n++;
    }
  }
  target_entropy /= n;

  auto state = giftlab::model::OptimizerState::for_model(m, 0.05, 0.0);
  double last = 0.0;
  for (int step = 0; step < 3000; ++step) {
    const auto res = gift_loss(m, base, batch, cfg);
    CHECK(res.loss >= target_entropy - 1e-9);
    giftlab::model::apply_update(m, res.grads, state);
    last = res.loss;
  }
  CHECK(last == doctest::Approx(target_entropy).epsilon(1e-6));
}
