#include "giftlab/gift.hpp"

#include <cmath>
#include <stdexcept>

#include "giftlab/numerics.hpp"

namespace giftlab::gift {

namespace {

// (row, target token) pairs contributing to the loss for one sequence.
// Row j-1 of the forward logits predicts token j of the joined sequence.
std::vector<std::pair<int, int>> loss_positions(const model::TokenSequence& seq, bool mask_prompt) {
  const std::vector<int> joined = seq.joined();
  const int total = static_cast<int>(joined.size());
  const int start = mask_prompt ? static_cast<int>(seq.prompt.size()) : 1;
  if (mask_prompt && seq.prompt.empty()) {
    throw std::domain_error("loss: prompt must be non-empty when masking prompts");
  }
  std::vector<std::pair<int, int>> out;
  for (int j = start; j < total; ++j) out.emplace_back(j - 1, joined[j]);
  return out;
}

std::size_t total_positions(std::span<const model::TokenSequence> batch, bool mask_prompt) {
  if (batch.empty()) throw std::domain_error("loss: empty batch");
  std::size_t n = 0;
  for (const auto& seq : batch) n += loss_positions(seq, mask_prompt).size();
  if (n == 0) throw std::domain_error("loss: batch has no response tokens");
  return n;
}

// Shared driver: `fill` receives the model's log-prob row and writes the
// per-position loss contribution and its gradient at the logits (both
// unweighted). The driver applies the normalization weight and runs the
// model backward once per sequence.
template <class Fill>
LossResult run_loss(model::PolicyModel& m, std::span<const model::TokenSequence> batch,
                    bool mask_prompt, bool token_mean, Fill&& fill) {
  const std::size_t n_tokens = total_positions(batch, mask_prompt);
  LossResult result;
  result.grads.assign(m.params().size(), 0.0);

  for (std::size_t si = 0; si < batch.size(); ++si) {
    const auto& seq = batch[si];
    const auto positions = loss_positions(seq, mask_prompt);
    if (positions.empty()) continue;
    const double w = token_mean ? 1.0 / static_cast<double>(n_tokens)
                                : 1.0 / static_cast<double>(batch.size());
    const std::vector<int> joined = seq.joined();
    const Grid& logits = m.forward_train(joined);
    Grid dlogits(logits.rows(), logits.cols());
    std::vector<double> logprobs(logits.cols());
    std::vector<double> grad_row(logits.cols());

    for (const auto& [row, tok] : positions) {
      num::log_softmax_into(logits.row_span(row), logprobs);
      std::fill(grad_row.begin(), grad_row.end(), 0.0);
      const double contrib = fill(si, row, tok, logprobs, grad_row);
      result.loss += w * contrib;
      for (int v = 0; v < logits.cols(); ++v) dlogits.at(row, v) += w * grad_row[v];
    }
    m.backward(dlogits, result.grads);
  }
  return result;
}

}  // namespace

TargetDistribution gift_targets(const Grid& base_logprobs, std::span<const int> oracle,
                                double beta) {
  if (!std::isfinite(beta) || beta < 0.0) {
    throw std::invalid_argument("gift_targets: beta must be finite and >= 0");
  }
  if (base_logprobs.rows() != static_cast<int>(oracle.size())) {
    throw std::invalid_argument("gift_targets: row count must match oracle length");
  }
  const int vocab = base_logprobs.cols();
  TargetDistribution target;
  target.rows = Grid(base_logprobs.rows(), vocab);
  std::vector<double> adjusted(vocab);
  for (int t = 0; t < base_logprobs.rows(); ++t) {
    if (oracle[t] < 0 || oracle[t] >= vocab) {
      throw std::domain_error("gift_targets: oracle id out of vocabulary at position " +
                              std::to_string(t));
    }
    const double* row = base_logprobs.row(t);
    for (int v = 0; v < vocab; ++v) adjusted[v] = row[v];
    adjusted[oracle[t]] += beta;
    const auto probs = num::softmax(adjusted);
    for (int v = 0; v < vocab; ++v) target.rows.at(t, v) = probs[v];
  }
  return target;
}

LossResult gift_loss(model::PolicyModel& m, const model::PolicyModel& base,
                     std::span<const model::TokenSequence> batch, const GiftConfig& cfg) {
  if (m.vocab_size() != base.vocab_size()) {
    throw std::domain_error("gift_loss: model and base vocabularies differ");
  }
  // Base rows for every sequence, computed once and frozen.
  std::vector<TargetDistribution> targets(batch.size());
  for (std::size_t si = 0; si < batch.size(); ++si) {
    const auto positions = loss_positions(batch[si], cfg.mask_prompt);
    const std::vector<int> joined = batch[si].joined();
    const Grid base_logits = base.forward(joined);
    Grid base_logprobs(static_cast<int>(positions.size()), base_logits.cols());
    std::vector<int> oracle(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      num::log_softmax_into(base_logits.row_span(positions[i].first),
                            base_logprobs.row_span(static_cast<int>(i)));
      oracle[i] = positions[i].second;
    }
    targets[si] = gift_targets(base_logprobs, oracle, cfg.beta);
  }

  std::vector<std::size_t> cursor(batch.size(), 0);
  return run_loss(m, batch, cfg.mask_prompt, cfg.token_mean,
                  [&](std::size_t si, int, int, const std::vector<double>& logprobs,
                      std::vector<double>& grad_row) {
                    const auto trow = targets[si].rows.row_span(static_cast<int>(cursor[si]++));
                    const double contrib = num::soft_cross_entropy(trow, logprobs);
                    for (std::size_t v = 0; v < grad_row.size(); ++v) {
                      grad_row[v] = std::exp(logprobs[v]) - trow[v];
                    }
                    return contrib;
                  });
}

LossResult sft_loss(model::PolicyModel& m, std::span<const model::TokenSequence> batch,
                    bool mask_prompt, bool token_mean) {
  return run_loss(m, batch, mask_prompt, token_mean,
                  [](std::size_t, int, int tok, const std::vector<double>& logprobs,
                     std::vector<double>& grad_row) {
                    for (std::size_t v = 0; v < grad_row.size(); ++v) {
                      grad_row[v] = std::exp(logprobs[v]);
                    }
                    grad_row[tok] -= 1.0;
                    return -logprobs[tok];
                  });
}

LossResult entropy_reg_loss(model::PolicyModel& m, std::span<const model::TokenSequence> batch,
                            double lambda_h, bool mask_prompt, bool token_mean) {
  if (lambda_h < 0.0) throw std::invalid_argument("entropy_reg_loss: lambda_h must be >= 0");
  return run_loss(m, batch, mask_prompt, token_mean,
                  [lambda_h](std::size_t, int, int tok, const std::vector<double>& logprobs,
                             std::vector<double>& grad_row) {
                    double h = 0.0;
                    for (const double lp : logprobs) h -= std::exp(lp) * lp;
                    for (std::size_t v = 0; v < grad_row.size(); ++v) {
                      const double p = std::exp(logprobs[v]);
                      // d(-H)/dz_v = p (log p + H)
                      grad_row[v] = p + lambda_h * p * (logprobs[v] + h);
                    }
                    grad_row[tok] -= 1.0;
                    return -logprobs[tok] - lambda_h * h;
                  });
}

LossResult label_smoothing_loss(model::PolicyModel& m, std::span<const model::TokenSequence> batch,
                                double eps, bool mask_prompt, bool token_mean) {
  if (eps < 0.0 || eps >= 1.0) throw std::invalid_argument("label_smoothing_loss: eps must be in [0, 1)");
  const double uniform = eps / m.vocab_size();
  return run_loss(m, batch, mask_prompt, token_mean,
                  [eps, uniform](std::size_t, int, int tok, const std::vector<double>& logprobs,
                                 std::vector<double>& grad_row) {
                    double contrib = 0.0;
                    for (std::size_t v = 0; v < grad_row.size(); ++v) {
                      const double tv = uniform + (static_cast<int>(v) == tok ? 1.0 - eps : 0.0);
                      contrib -= tv * logprobs[v];
                      grad_row[v] = std::exp(logprobs[v]) - tv;
                    }
                    return contrib;
                  });
}

LossResult kd_loss(model::PolicyModel& m, const model::PolicyModel& base,
                   std::span<const model::TokenSequence> batch, double alpha, bool mask_prompt,
                   bool token_mean) {
  if (alpha < 0.0) throw std::invalid_argument("kd_loss: alpha must be >= 0");
  if (m.vocab_size() != base.vocab_size()) {
    throw std::domain_error("kd_loss: model and base vocabularies differ");
  }
  // Teacher rows per sequence, frozen.
  std::vector<Grid> teacher(batch.size());
  for (std::size_t si = 0; si < batch.size(); ++si) {
    const auto positions = loss_positions(batch[si], mask_prompt);
    const Grid base_logits = base.forward(batch[si].joined());
    teacher[si] = Grid(static_cast<int>(positions.size()), base_logits.cols());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto probs = num::softmax(base_logits.row_span(positions[i].first));
      for (int v = 0; v < base_logits.cols(); ++v) {
        teacher[si].at(static_cast<int>(i), v) = probs[v];
      }
    }
  }

  std::vector<std::size_t> cursor(batch.size(), 0);
  return run_loss(m, batch, mask_prompt, token_mean,
                  [&](std::size_t si, int, int tok, const std::vector<double>& logprobs,
                      std::vector<double>& grad_row) {
                    const auto trow = teacher[si].row_span(static_cast<int>(cursor[si]++));
                    double kl = 0.0;
                    for (std::size_t v = 0; v < grad_row.size(); ++v) {
                      const double b = trow[v];
                      if (b > 0.0) kl += b * (std::log(b) - logprobs[v]);
                      grad_row[v] = (1.0 + alpha) * std::exp(logprobs[v]) - alpha * b;
                    }
                    grad_row[tok] -= 1.0;
                    return -logprobs[tok] + alpha * kl;
                  });
}

}  // namespace giftlab::gift
