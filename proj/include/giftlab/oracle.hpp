#pragma once

/**
 * Brute-force enumeration oracle over small sequence spaces.
 *
 * Every closed-form identity used elsewhere is checkable here by exact
 * summation: the Gibbs form of the KL-regularized optimum, the two-stage
 * composition identity, and the token-level soft-Q / advantage
 * decomposition together with its indicator approximation.
 *
 * A response is complete when it emits the end-of-sequence token or
 * reaches the horizon; rewards are defined on complete responses only.
 */

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "giftlab/model.hpp"
#include "giftlab/rng.hpp"

namespace giftlab::oracle {

struct EnumerableTask {
  int vocab_size = 2;   // <= 6
  int eos_id = 1;
  std::vector<int> prompt;
  int horizon = 2;      // <= 6
  std::function<double(std::span<const int>)> reward;  // complete responses -> finite real

  void validate() const;
  bool is_complete(std::span<const int> response) const;
};

// Explicit distribution over the enumerated responses of one task, kept in
// log space. log_partition is the log of the unnormalized Gibbs mass.
struct SequenceDistribution {
  std::vector<double> log_probs;
  double log_partition = 0.0;

  std::vector<double> probs() const;
};

// All complete responses in lexicographic token-id order. Refuses (listing
// the count) when the space exceeds 50,000 sequences.
std::vector<std::vector<int>> enumerate_sequences(const EnumerableTask& task);

// log pi(response | prompt) under an autoregressive policy, one entry per
// enumerated sequence.
std::vector<double> sequence_log_probs(const model::PolicyModel& ref, const EnumerableTask& task,
                                       const std::vector<std::vector<int>>& sequences);

// pi(y) = ref(y) e^{temp R(y)} / Z.
SequenceDistribution gibbs_policy(const SequenceDistribution& ref, const EnumerableTask& task,
                                  double temp);
SequenceDistribution gibbs_policy(const model::PolicyModel& ref, const EnumerableTask& task,
                                  double temp);

// E_pi[R] - (1/eta) KL(pi || ref), exact summation.
double kl_rl_objective(const SequenceDistribution& pi, const SequenceDistribution& ref,
                       const EnumerableTask& task, double eta);

struct OptimalityReport {
  int trials = 0;
  double max_improvement = 0.0;        // max_pi J(pi) - J(pi*); pass needs <= 1e-9
  double partition_identity_error = 0.0;  // |J(pi*) - (1/eta) ln Z|
  bool pass = false;
  std::optional<std::vector<double>> counterexample;
};

// Random perturbations of log pi* must never beat the Gibbs policy, and
// J(pi*) must equal (1/eta) ln Z.
OptimalityReport verify_gibbs_optimality(const EnumerableTask& task, const SequenceDistribution& ref,
                                         double eta, int trials, Rng& rng);

struct ConsistencyCheckReport {
  double eta = 0.0;
  double lambda = 0.0;
  double beta = 0.0;  // eta - lambda
  double tv_distance = 0.0;
  bool pass = false;  // tv <= 1e-10
};

// Composes a beta = eta - lambda stage with a lambda stage and compares
// against the eta global optimum.
ConsistencyCheckReport consistency_check(const model::PolicyModel& base, const EnumerableTask& task,
                                         double eta, double lambda);

// Q*(prefix) = log sum over suffix completions of base(suffix|prefix) e^{beta R}.
double soft_q(const model::PolicyModel& base, const EnumerableTask& task,
              std::span<const int> prefix, double beta);

// Q*(prefix + token) - Q*(prefix).
double soft_advantage(const model::PolicyModel& base, const EnumerableTask& task,
                      std::span<const int> prefix, int token, double beta);

// Normalized base(.|prefix) e^{A*(.)}; equals the conditional of the
// sequence-level Gibbs policy at this prefix.
std::vector<double> exact_token_policy(const model::PolicyModel& base, const EnumerableTask& task,
                                       std::span<const int> prefix, double beta);

struct AdvantageGapPosition {
  int position = 0;
  int oracle_token = 0;
  double exact_oracle_advantage = 0.0;  // approximation claims beta
  double max_offpath_advantage = 0.0;   // approximation claims 0
};

struct AdvantageGapReport {
  std::vector<AdvantageGapPosition> positions;
  double max_abs_error = 0.0;  // worst |exact - approximation| over all slots
};

// Quality of the indicator approximation A* ~ beta * 1(token = oracle)
// along a rewarded trajectory.
AdvantageGapReport advantage_gap_report(const model::PolicyModel& base, const EnumerableTask& task,
                                        const model::TokenSequence& oracle_seq, double beta);

// --- fixtures -------------------------------------------------------------

// Deterministic battery of small tasks paired with tabular base models,
// used by the CLI oracle run and the acceptance suite.
struct BatteryEntry {
  std::string name;
  EnumerableTask task;
  std::shared_ptr<model::PolicyModel> base;
};
std::vector<BatteryEntry> make_battery();

// Random task + random tabular reference for property tests.
EnumerableTask random_task(Rng& rng, int max_vocab, int max_horizon, bool binary_reward);
std::shared_ptr<model::PolicyModel> random_tabular_ref(Rng& rng, const EnumerableTask& task);

struct CheckLine {
  std::string check;
  double max_error = 0.0;
  bool pass = false;
};

// Full verification sweep over the battery; one line per assertion.
std::vector<CheckLine> run_oracle_suite(Rng& rng);

}  // namespace giftlab::oracle
