#pragma once

/**
 * Group-relative policy optimization on verifiable tasks.
 *
 * Rollouts are sampled in groups per prompt; advantages are rewards minus
 * the group mean (no std normalization). The update is the clipped ratio
 * surrogate plus an exact per-token KL penalty toward a frozen reference
 * policy, computed from full next-token distributions rather than sampled
 * tokens. One optimizer update per rollout batch.
 */

#include <functional>
#include <span>
#include <vector>

#include "giftlab/model.hpp"
#include "giftlab/rng.hpp"
#include "giftlab/tasks.hpp"

namespace giftlab::rl {

struct RlConfig {
  int group_size = 8;
  double clip_ratio = 0.2;
  double learning_rate = 1e-4;  // micro-scale default; 1e-6 is the usual choice at full scale
  double rollout_temperature = 1.0;
  double kl_coeff = 0.0;
  int epochs = 1;      // passes over the rl prompt split; 0 skips the stage
  int steps = 0;       // explicit step budget; overrides epochs when > 0
  int batch_prompts = 8;
  int max_new_tokens = 16;

  void validate() const;
};

struct RolloutGroup {
  std::vector<int> prompt;
  std::vector<model::TokenSequence> responses;    // exactly group_size
  std::vector<double> rewards;                    // binary, from the task verifier
  std::vector<std::vector<double>> old_logprobs;  // per response, per generated token
};

// A_i = r_i - mean(r); sums to zero.
std::vector<double> group_advantages(std::span<const double> rewards);

struct GrpoDiagnostics {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double mean_kl = 0.0;       // exact KL(model || ref), averaged per token
  double mean_entropy = 0.0;  // model next-token entropy at rollout positions
};

struct GrpoResult {
  double loss = 0.0;  // clipped surrogate + kl_coeff * mean KL
  std::vector<double> grads;
  GrpoDiagnostics diagnostics;
  bool rejected = false;  // non-finite ratios: no usable gradient
};

GrpoResult grpo_update(model::PolicyModel& m, std::span<const RolloutGroup> groups,
                       const RlConfig& cfg, const model::PolicyModel& ref);

struct StepRecord {
  int step = 0;
  double mean_reward = 0.0;
  double kl_to_ref = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
};

// Samples rollout groups over the prompt set, applies grpo_update with
// AdamW, and reports one record per step. Fully deterministic per rng seed.
std::vector<StepRecord> train_rl(model::PolicyModel& m, const tasks::TaskSpec& task,
                                 std::span<const std::vector<int>> prompts, const RlConfig& cfg,
                                 Rng& rng,
                                 const std::function<void(const StepRecord&)>& sink = nullptr);

// Rollout collection alone; exposed for tests.
RolloutGroup collect_group(model::PolicyModel& m, const tasks::TaskSpec& task,
                           const std::vector<int>& prompt, const RlConfig& cfg, Rng& rng);

}  // namespace giftlab::rl
