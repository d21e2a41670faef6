#pragma once

/**
 * Checkpoint diagnostics: pass@k estimation, top-K token overlap,
 * teacher-forced KL drift, and last-layer representation similarity.
 */

#include <map>
#include <span>
#include <string>
#include <vector>

#include "giftlab/model.hpp"
#include "giftlab/rng.hpp"
#include "giftlab/tasks.hpp"

namespace giftlab::io {
struct ExperimentConfig;
}

namespace giftlab::analysis {

// Unbiased combinatorial estimator 1 - C(n-c, k)/C(n, k), in log space.
double pass_at_k(int n, int c, int k);

// |topK(p) ∩ topK(q)| / k with probability ties broken by ascending id.
double topk_overlap(std::span<const double> p, std::span<const double> q, int k);

// Cosine similarity and Euclidean distance of two pooled vectors.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double l2_distance(std::span<const double> a, std::span<const double> b);

// Mean over response positions of KL(a's next-token dist || b's), with both
// models teacher-forced on the oracle prefixes of eval_set.
double model_kl(const model::PolicyModel& a, const model::PolicyModel& b,
                std::span<const model::TokenSequence> eval_set);

// Mean over eval positions of the top-k overlap between the two models'
// next-token distributions.
double mean_topk_overlap(const model::PolicyModel& a, const model::PolicyModel& b,
                         std::span<const model::TokenSequence> eval_set, int k);

struct RepSimilarity {
  double cosine = 0.0;
  double l2 = 0.0;
};

// Last-layer activations mean-pooled over response positions under teacher
// forcing; cosine and L2 averaged over the eval set.
RepSimilarity rep_similarity(const model::PolicyModel& a, const model::PolicyModel& b,
                             std::span<const model::TokenSequence> eval_set);

struct ConsistencyReport {
  std::string stage;      // e.g. "base->sft"
  std::string direction;  // "earlier||later" or "later||earlier"
  double cosine = 0.0;
  double l2 = 0.0;
  double kl = 0.0;
  std::map<int, double> topk;  // K -> overlap, keys ascending
};

// Drift between an earlier and a later checkpoint. K values above the
// vocabulary size are dropped.
ConsistencyReport consistency_report(const std::string& stage, const model::PolicyModel& earlier,
                                     const model::PolicyModel& later,
                                     std::span<const model::TokenSequence> eval_set,
                                     std::span<const int> topk_list,
                                     bool kl_later_first = false);

struct PassAtKReport {
  std::vector<std::pair<int, int>> per_prompt;  // (n, c)
  std::vector<int> k_list;
  std::map<int, double> estimates;  // k -> mean pass@k
  double temperature = 0.6;
  int samples = 16;
};

// Samples `n_samples` completions per validation prompt and scores them
// with the task verifier.
PassAtKReport evaluate_pass_at_k(const model::PolicyModel& m, const tasks::TaskSpec& task,
                                 std::span<const std::vector<int>> prompts, int n_samples,
                                 double temperature, std::span<const int> k_list, int max_new_tokens,
                                 Rng& rng);

// --- beta sweep -------------------------------------------------------------

struct SweepCell {
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::string status;  // "ok" or "failed: <reason>"
  double pass1 = 0.0;
  double pass8 = 0.0;
  double final_reward = 0.0;  // last RL step mean reward (0 when RL skipped)
};

struct SweepTable {
  std::vector<SweepCell> cells;
  std::map<double, double> median_pass1;
  std::map<double, double> median_pass8;
};

// Runs the full pipeline per (beta, seed) cell on shared data and base
// checkpoints; failures mark the cell and the sweep continues.
SweepTable sweep_beta(const io::ExperimentConfig& base_config, std::span<const double> betas,
                      std::span<const std::uint64_t> seeds);

std::string sweep_csv(const SweepTable& table);

double median(std::vector<double> values);

}  // namespace giftlab::analysis
