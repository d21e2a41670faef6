#pragma once

/**
 * Soft-target construction and fine-tuning losses.
 *
 * The central object is the per-position target distribution obtained by
 * adding a gain beta to the base model's log-probability of the oracle
 * token and renormalizing: target = softmax(base_logprobs + beta * onehot).
 * beta = 0 reduces to pure base distillation, beta -> infinity recovers the
 * one-hot cross-entropy of standard fine-tuning. The remaining losses are
 * the usual ablations: entropy regularization, label smoothing, and forward
 * KL distillation toward the base model.
 *
 * Base log-probabilities are computed once per sequence and treated as
 * constants; gradients flow only through the trained model.
 */

#include <span>
#include <vector>

#include "giftlab/grid.hpp"
#include "giftlab/model.hpp"

namespace giftlab::gift {

struct GiftConfig {
  double beta = 5.0;       // inverse-temperature gain, >= 0 and finite
  bool mask_prompt = true; // losses cover response positions only
  bool token_mean = true;  // normalize per token; false = mean over sequences of per-sequence sums
};

// One probability row per response position.
struct TargetDistribution {
  Grid rows;  // [positions, vocab]
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grads;  // same length as model.params()
};

// rows of base_logprobs must be log_softmax outputs aligned with `oracle`.
TargetDistribution gift_targets(const Grid& base_logprobs, std::span<const int> oracle,
                                double beta);

LossResult gift_loss(model::PolicyModel& m, const model::PolicyModel& base,
                     std::span<const model::TokenSequence> batch, const GiftConfig& cfg);

LossResult sft_loss(model::PolicyModel& m, std::span<const model::TokenSequence> batch,
                    bool mask_prompt = true, bool token_mean = true);

// sft - lambda_h * mean per-position entropy of the model distribution.
LossResult entropy_reg_loss(model::PolicyModel& m, std::span<const model::TokenSequence> batch,
                            double lambda_h, bool mask_prompt = true, bool token_mean = true);

// Soft cross-entropy against (1-eps) * onehot + eps / vocab.
LossResult label_smoothing_loss(model::PolicyModel& m, std::span<const model::TokenSequence> batch,
                                double eps, bool mask_prompt = true, bool token_mean = true);

// sft + alpha * mean per-position KL(base || model).
LossResult kd_loss(model::PolicyModel& m, const model::PolicyModel& base,
                   std::span<const model::TokenSequence> batch, double alpha,
                   bool mask_prompt = true, bool token_mean = true);

}  // namespace giftlab::gift
