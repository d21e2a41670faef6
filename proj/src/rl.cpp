#include "giftlab/rl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "giftlab/numerics.hpp"

namespace giftlab::rl {

void RlConfig::validate() const {
  if (group_size < 2) throw std::invalid_argument("RlConfig: group_size must be >= 2");
  if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) {
    throw std::invalid_argument("RlConfig: clip_ratio must be in (0, 1)");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("RlConfig: learning_rate must be > 0");
  if (!(rollout_temperature > 0.0)) {
    throw std::invalid_argument("RlConfig: rollout_temperature must be > 0");
  }
  if (kl_coeff < 0.0) throw std::invalid_argument("RlConfig: kl_coeff must be >= 0");
  if (epochs < 0 || steps < 0) throw std::invalid_argument("RlConfig: negative step budget");
  if (batch_prompts < 1) throw std::invalid_argument("RlConfig: batch_prompts must be >= 1");
  if (max_new_tokens < 1) throw std::invalid_argument("RlConfig: max_new_tokens must be >= 1");
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.empty()) throw std::invalid_argument("group_advantages: empty group");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = rewards[i] - mean;
  return out;
}

RolloutGroup collect_group(model::PolicyModel& m, const tasks::TaskSpec& task,
                           const std::vector<int>& prompt, const RlConfig& cfg, Rng& rng) {
  RolloutGroup group;
  group.prompt = prompt;
  const int budget =
      std::min(cfg.max_new_tokens, m.context_length() - static_cast<int>(prompt.size()));
  if (budget < 1) throw std::domain_error("collect_group: prompt leaves no room to generate");

  for (int i = 0; i < cfg.group_size; ++i) {
    auto seq = model::sample_sequence(m, prompt, cfg.rollout_temperature, budget, rng);
    group.rewards.push_back(tasks::reward(task, seq.prompt, seq.response));

    // Old log-probabilities at temperature 1 under the current policy.
    const std::vector<int> joined = seq.joined();
    const Grid logits = m.forward(joined);
    std::vector<double> lps;
    lps.reserve(seq.response.size());
    for (std::size_t j = 0; j < seq.response.size(); ++j) {
      const int row = static_cast<int>(prompt.size() + j) - 1;
      const auto lp = num::log_softmax(logits.row_span(row));
      lps.push_back(lp[seq.response[j]]);
    }
    group.old_logprobs.push_back(std::move(lps));
    group.responses.push_back(std::move(seq));
  }
  return group;
}

GrpoResult grpo_update(model::PolicyModel& m, std::span<const RolloutGroup> groups,
                       const RlConfig& cfg, const model::PolicyModel& ref) {
  cfg.validate();
  if (groups.empty()) throw std::domain_error("grpo_update: no rollout groups");
  if (m.vocab_size() != ref.vocab_size()) {
    throw std::domain_error("grpo_update: model and reference vocabularies differ");
  }

  // Count tokens for the per-token mean.
  std::size_t n_tokens = 0;
  for (const auto& g : groups) {
    if (static_cast<int>(g.responses.size()) != cfg.group_size ||
        g.rewards.size() != g.responses.size() || g.old_logprobs.size() != g.responses.size()) {
      throw std::domain_error("grpo_update: malformed rollout group");
    }
    for (const auto& r : g.responses) n_tokens += r.response.size();
  }
  if (n_tokens == 0) throw std::domain_error("grpo_update: empty rollouts");
  const double inv_n = 1.0 / static_cast<double>(n_tokens);

  GrpoResult result;
  result.grads.assign(m.params().size(), 0.0);
  const double lo = 1.0 - cfg.clip_ratio;
  const double hi = 1.0 + cfg.clip_ratio;
  double sum_ratio = 0.0;
  double clipped = 0.0;
  double surrogate = 0.0;
  double kl_total = 0.0;
  double entropy_total = 0.0;

  for (const auto& g : groups) {
    const auto advantages = group_advantages(g.rewards);
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      const auto& seq = g.responses[i];
      if (seq.response.empty()) continue;
      const std::vector<int> joined = seq.joined();
      const Grid& logits = m.forward_train(joined);
      const Grid ref_logits = ref.forward(joined);
      Grid dlogits(logits.rows(), logits.cols());
      const double advantage = advantages[i];

      std::vector<double> lp(logits.cols()), ref_lp(logits.cols());
      for (std::size_t j = 0; j < seq.response.size(); ++j) {
        const int row = static_cast<int>(seq.prompt.size() + j) - 1;
        const int tok = seq.response[j];
        num::log_softmax_into(logits.row_span(row), lp);
        const double old_lp = g.old_logprobs[i][j];
        const double ratio = std::exp(lp[tok] - old_lp);
        if (!std::isfinite(ratio)) {
          result.rejected = true;
          result.grads.assign(result.grads.size(), 0.0);
          return result;
        }
        sum_ratio += ratio;

        // min(ratio * A, clip(ratio) * A); gradient flows only through the
        // unclipped branch when it attains the min.
        const double surr_unclipped = ratio * advantage;
        const double surr_clipped = std::clamp(ratio, lo, hi) * advantage;
        const bool use_unclipped = surr_unclipped <= surr_clipped;
        surrogate -= inv_n * std::min(surr_unclipped, surr_clipped);
        if (!use_unclipped) clipped += 1.0;

        double coeff = 0.0;
        if (use_unclipped) coeff = -inv_n * advantage * ratio;

        // KL(model || ref) at this position, plus entropy bookkeeping.
        num::log_softmax_into(ref_logits.row_span(row), ref_lp);
        double kl = 0.0;
        double entropy = 0.0;
        for (int v = 0; v < logits.cols(); ++v) {
          const double p = std::exp(lp[v]);
          kl += p * (lp[v] - ref_lp[v]);
          entropy -= p * lp[v];
        }
        kl_total += kl;
        entropy_total += entropy;

        for (int v = 0; v < logits.cols(); ++v) {
          const double p = std::exp(lp[v]);
          double dz = coeff * ((v == tok ? 1.0 : 0.0) - p);
          if (cfg.kl_coeff > 0.0) {
            dz += inv_n * cfg.kl_coeff * p * ((lp[v] - ref_lp[v]) - kl);
          }
          dlogits.at(row, v) += dz;
        }
      }
      m.backward(dlogits, result.grads);
    }
  }

  result.diagnostics.mean_ratio = sum_ratio * inv_n;
  result.diagnostics.clip_fraction = clipped * inv_n;
  result.diagnostics.mean_kl = kl_total * inv_n;
  result.diagnostics.mean_entropy = entropy_total * inv_n;
  result.loss = surrogate + cfg.kl_coeff * kl_total * inv_n;
  return result;
}

std::vector<StepRecord> train_rl(model::PolicyModel& m, const tasks::TaskSpec& task,
                                 std::span<const std::vector<int>> prompts, const RlConfig& cfg,
                                 Rng& rng, const std::function<void(const StepRecord&)>& sink) {
  cfg.validate();
  if (prompts.empty()) throw std::invalid_argument("train_rl: no prompts");

  const int prompts_n = static_cast<int>(prompts.size());
  const int steps_per_epoch = (prompts_n + cfg.batch_prompts - 1) / cfg.batch_prompts;
  const int total_steps = cfg.steps > 0 ? cfg.steps : cfg.epochs * steps_per_epoch;

  std::vector<StepRecord> records;
  if (total_steps == 0) return records;

  const std::unique_ptr<model::PolicyModel> ref = m.clone();
  auto opt = model::OptimizerState::for_model(m, cfg.learning_rate, 0.0);

  std::vector<int> order(prompts_n);
  for (int i = 0; i < prompts_n; ++i) order[i] = i;
  rng.shuffle(order);
  int cursor = 0;

  for (int step = 0; step < total_steps; ++step) {
    std::vector<RolloutGroup> groups;
    double reward_sum = 0.0;
    int reward_count = 0;
    for (int b = 0; b < cfg.batch_prompts; ++b) {
      if (cursor == prompts_n) {
        rng.shuffle(order);
        cursor = 0;
      }
      const auto& prompt = prompts[order[cursor++]];
      groups.push_back(collect_group(m, task, prompt, cfg, rng));
      for (double r : groups.back().rewards) {
        reward_sum += r;
        reward_count++;
      }
    }

    const GrpoResult update = grpo_update(m, groups, cfg, *ref);
    if (!update.rejected) {
      model::apply_update(m, update.grads, opt);
    }

    StepRecord rec;
    rec.step = step;
    rec.mean_reward = reward_sum / reward_count;
    rec.kl_to_ref = update.diagnostics.mean_kl;
    rec.entropy = update.diagnostics.mean_entropy;
    rec.clip_frac = update.diagnostics.clip_fraction;
    if (sink) sink(rec);
    records.push_back(rec);
  }
  return records;
}

}  // namespace giftlab::rl
