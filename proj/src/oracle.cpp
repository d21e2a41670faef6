#include "giftlab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "giftlab/numerics.hpp"
#include "giftlab/tabular.hpp"

namespace giftlab::oracle {

namespace {

constexpr int kMaxSequences = 50000;

double checked_reward(const EnumerableTask& task, std::span<const int> response) {
  const double r = task.reward(response);
  if (!std::isfinite(r)) throw std::domain_error("task reward is non-finite");
  return r;
}

void validate_prefix(const EnumerableTask& task, std::span<const int> prefix) {
  if (static_cast<int>(prefix.size()) > task.horizon) {
    throw std::domain_error("prefix longer than horizon");
  }
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (prefix[i] < 0 || prefix[i] >= task.vocab_size) {
      throw std::domain_error("prefix token out of vocabulary at position " + std::to_string(i));
    }
    if (prefix[i] == task.eos_id && i + 1 < prefix.size()) {
      throw std::domain_error("prefix has end-of-sequence before its final position");
    }
  }
}

// DFS over completions extending `response`, in token-id order. `visit` is
// called with the complete response.
template <class Visit>
void walk_completions(const EnumerableTask& task, std::vector<int>& response, Visit&& visit) {
  for (int v = 0; v < task.vocab_size; ++v) {
    response.push_back(v);
    if (task.is_complete(response)) {
      visit(response);
    } else {
      walk_completions(task, response, visit);
    }
    response.pop_back();
  }
}

// Conditional distribution over the next token at `prefix`, marginalized
// from an explicit sequence-level distribution.
std::vector<double> marginal_conditional(const SequenceDistribution& dist,
                                         const std::vector<std::vector<int>>& sequences,
                                         std::span<const int> prefix, int vocab_size) {
  std::vector<double> mass(vocab_size, 0.0);
  double denom = 0.0;
  const auto probs = dist.probs();
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& seq = sequences[i];
    if (seq.size() <= prefix.size()) continue;
    if (!std::equal(prefix.begin(), prefix.end(), seq.begin())) continue;
    mass[seq[prefix.size()]] += probs[i];
    denom += probs[i];
  }
  if (denom <= 0.0) throw std::domain_error("marginal_conditional: prefix has zero mass");
  for (double& m : mass) m /= denom;
  return mass;
}

}  // namespace

void EnumerableTask::validate() const {
  if (vocab_size < 2 || vocab_size > 6) {
    throw std::domain_error("EnumerableTask: vocabulary size must be in [2, 6]");
  }
  if (horizon < 1 || horizon > 6) {
    throw std::domain_error("EnumerableTask: horizon must be in [1, 6]");
  }
  if (eos_id < 0 || eos_id >= vocab_size) {
    throw std::domain_error("EnumerableTask: eos id out of vocabulary");
  }
  for (int t : prompt) {
    if (t < 0 || t >= vocab_size) throw std::domain_error("EnumerableTask: prompt token out of vocabulary");
  }
  if (!reward) throw std::domain_error("EnumerableTask: missing reward function");
}

bool EnumerableTask::is_complete(std::span<const int> response) const {
  if (response.empty()) return false;
  return response.back() == eos_id || static_cast<int>(response.size()) == horizon;
}

std::vector<double> SequenceDistribution::probs() const {
  std::vector<double> out(log_probs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(log_probs[i]);
  return out;
}

std::vector<std::vector<int>> enumerate_sequences(const EnumerableTask& task) {
  task.validate();
  long long count = 0;
  std::vector<int> scratch;
  walk_completions(task, scratch, [&count](const std::vector<int>&) { ++count; });
  if (count > kMaxSequences) {
    throw std::domain_error("enumerate_sequences: " + std::to_string(count) +
                            " sequences exceeds the 50000 cap");
  }
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(count));
  walk_completions(task, scratch, [&out](const std::vector<int>& seq) { out.push_back(seq); });
  return out;
}

std::vector<double> sequence_log_probs(const model::PolicyModel& ref, const EnumerableTask& task,
                                       const std::vector<std::vector<int>>& sequences) {
  std::vector<double> out;
  out.reserve(sequences.size());
  std::vector<int> context;
  for (const auto& seq : sequences) {
    context.assign(task.prompt.begin(), task.prompt.end());
    double lp = 0.0;
    for (int tok : seq) {
      const auto logprobs = num::log_softmax(ref.next_logits(context));
      lp += logprobs[tok];
      context.push_back(tok);
    }
    out.push_back(lp);
  }
  return out;
}

static SequenceDistribution gibbs_from_ref_logprobs(const std::vector<double>& ref_log_probs,
                                                    const EnumerableTask& task, double temp,
                                                    const std::vector<std::vector<int>>& sequences) {
  if (temp < 0.0) throw std::invalid_argument("gibbs_policy: temp must be >= 0");
  SequenceDistribution out;
  out.log_probs.resize(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (!std::isfinite(ref_log_probs[i])) {
      throw std::domain_error("gibbs_policy: reference assigns zero mass to sequence " +
                              std::to_string(i));
    }
    out.log_probs[i] = ref_log_probs[i] + temp * checked_reward(task, sequences[i]);
  }
  out.log_partition = num::log_sum_exp(out.log_probs);
  for (double& lp : out.log_probs) lp -= out.log_partition;
  return out;
}

SequenceDistribution gibbs_policy(const SequenceDistribution& ref, const EnumerableTask& task,
                                  double temp) {
  const auto sequences = enumerate_sequences(task);
  if (ref.log_probs.size() != sequences.size()) {
    throw std::invalid_argument("gibbs_policy: reference size does not match enumeration");
  }
  return gibbs_from_ref_logprobs(ref.log_probs, task, temp, sequences);
}

SequenceDistribution gibbs_policy(const model::PolicyModel& ref, const EnumerableTask& task,
                                  double temp) {
  const auto sequences = enumerate_sequences(task);
  return gibbs_from_ref_logprobs(sequence_log_probs(ref, task, sequences), task, temp, sequences);
}

double kl_rl_objective(const SequenceDistribution& pi, const SequenceDistribution& ref,
                       const EnumerableTask& task, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("kl_rl_objective: eta must be > 0");
  const auto sequences = enumerate_sequences(task);
  if (pi.log_probs.size() != sequences.size() || ref.log_probs.size() != sequences.size()) {
    throw std::invalid_argument("kl_rl_objective: distribution size mismatch");
  }
  double value = 0.0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const double p = std::exp(pi.log_probs[i]);
    if (p == 0.0) continue;
    if (!std::isfinite(ref.log_probs[i])) {
      throw std::domain_error("kl_rl_objective: support violation at sequence " + std::to_string(i));
    }
    value += p * checked_reward(task, sequences[i]);
    value -= p * (pi.log_probs[i] - ref.log_probs[i]) / eta;
  }
  return value;
}

OptimalityReport verify_gibbs_optimality(const EnumerableTask& task, const SequenceDistribution& ref,
                                         double eta, int trials, Rng& rng) {
  if (trials < 1) throw std::invalid_argument("verify_gibbs_optimality: trials must be >= 1");
  const SequenceDistribution opt = gibbs_policy(ref, task, eta);
  const double j_opt = kl_rl_objective(opt, ref, task, eta);

  OptimalityReport report;
  report.trials = trials;
  report.partition_identity_error = std::abs(j_opt - opt.log_partition / eta);

  SequenceDistribution candidate;
  candidate.log_probs.resize(opt.log_probs.size());
  std::vector<double> perturbed(opt.log_probs.size());
  for (int trial = 0; trial < trials; ++trial) {
    const double sigma = 0.01 + 0.99 * rng.uniform();
    for (std::size_t i = 0; i < perturbed.size(); ++i) {
      perturbed[i] = opt.log_probs[i] + sigma * rng.normal();
    }
    num::log_softmax_into(perturbed, candidate.log_probs);
    const double j = kl_rl_objective(candidate, ref, task, eta);
    if (j - j_opt > report.max_improvement) {
      report.max_improvement = j - j_opt;
      if (j - j_opt > 1e-9) report.counterexample = candidate.probs();
    }
  }
  report.pass = report.max_improvement <= 1e-9 && report.partition_identity_error <= 1e-9;
  return report;
}

ConsistencyCheckReport consistency_check(const model::PolicyModel& base, const EnumerableTask& task,
                                         double eta, double lambda) {
  if (!(lambda > 0.0) || !(lambda < eta)) {
    throw std::domain_error("consistency_check: need 0 < lambda < eta");
  }
  ConsistencyCheckReport report;
  report.eta = eta;
  report.lambda = lambda;
  report.beta = eta - lambda;

  const SequenceDistribution stage1 = gibbs_policy(base, task, eta - lambda);
  const SequenceDistribution stage2 = gibbs_policy(stage1, task, lambda);
  const SequenceDistribution global = gibbs_policy(base, task, eta);
  report.tv_distance = num::total_variation(stage2.probs(), global.probs());
  report.pass = report.tv_distance <= 1e-10;
  return report;
}

double soft_q(const model::PolicyModel& base, const EnumerableTask& task,
              std::span<const int> prefix, double beta) {
  task.validate();
  validate_prefix(task, prefix);
  if (task.is_complete(prefix)) return beta * checked_reward(task, prefix);

  std::vector<double> terms;
  std::vector<int> context(task.prompt.begin(), task.prompt.end());
  context.insert(context.end(), prefix.begin(), prefix.end());
  std::vector<int> response(prefix.begin(), prefix.end());

  // DFS accumulating log base(suffix | prefix).
  auto descend = [&](auto&& self, double lp) -> void {
    const auto logprobs = num::log_softmax(base.next_logits(context));
    for (int v = 0; v < task.vocab_size; ++v) {
      response.push_back(v);
      context.push_back(v);
      const double lp_v = lp + logprobs[v];
      if (task.is_complete(response)) {
        terms.push_back(lp_v + beta * checked_reward(task, response));
      } else {
        self(self, lp_v);
      }
      response.pop_back();
      context.pop_back();
    }
  };
  descend(descend, 0.0);
  return num::log_sum_exp(terms);
}

double soft_advantage(const model::PolicyModel& base, const EnumerableTask& task,
                      std::span<const int> prefix, int token, double beta) {
  if (task.is_complete(prefix)) {
    throw std::domain_error("soft_advantage: prefix is already complete");
  }
  std::vector<int> extended(prefix.begin(), prefix.end());
  extended.push_back(token);
  return soft_q(base, task, extended, beta) - soft_q(base, task, prefix, beta);
}

std::vector<double> exact_token_policy(const model::PolicyModel& base, const EnumerableTask& task,
                                       std::span<const int> prefix, double beta) {
  task.validate();
  validate_prefix(task, prefix);
  if (task.is_complete(prefix)) {
    throw std::domain_error("exact_token_policy: prefix is already complete");
  }
  std::vector<int> context(task.prompt.begin(), task.prompt.end());
  context.insert(context.end(), prefix.begin(), prefix.end());
  const auto base_logprobs = num::log_softmax(base.next_logits(context));

  std::vector<double> scores(task.vocab_size);
  const double q_prefix = soft_q(base, task, prefix, beta);
  std::vector<int> extended(prefix.begin(), prefix.end());
  for (int v = 0; v < task.vocab_size; ++v) {
    extended.push_back(v);
    const double advantage = soft_q(base, task, extended, beta) - q_prefix;
    scores[v] = base_logprobs[v] + advantage;
    extended.pop_back();
  }
  return num::softmax(scores);
}

AdvantageGapReport advantage_gap_report(const model::PolicyModel& base, const EnumerableTask& task,
                                        const model::TokenSequence& oracle_seq, double beta) {
  task.validate();
  if (oracle_seq.prompt != task.prompt) {
    throw std::domain_error("advantage_gap_report: sequence prompt differs from task prompt");
  }
  const auto& response = oracle_seq.response;
  validate_prefix(task, response);
  if (!task.is_complete(response)) {
    throw std::domain_error("advantage_gap_report: oracle response is not complete");
  }
  if (checked_reward(task, response) != 1.0) {
    throw std::domain_error("advantage_gap_report: oracle response must earn reward 1");
  }

  AdvantageGapReport report;
  for (std::size_t t = 0; t < response.size(); ++t) {
    const std::span<const int> prefix(response.data(), t);
    AdvantageGapPosition pos;
    pos.position = static_cast<int>(t);
    pos.oracle_token = response[t];
    pos.exact_oracle_advantage = soft_advantage(base, task, prefix, response[t], beta);

    double max_off = -std::numeric_limits<double>::infinity();
    double max_off_err = 0.0;
    for (int v = 0; v < task.vocab_size; ++v) {
      if (v == response[t]) continue;
      const double a = soft_advantage(base, task, prefix, v, beta);
      max_off = std::max(max_off, a);
      max_off_err = std::max(max_off_err, std::abs(a));
    }
    pos.max_offpath_advantage = max_off;
    report.positions.push_back(pos);

    const double oracle_err = std::abs(pos.exact_oracle_advantage - beta);
    report.max_abs_error = std::max({report.max_abs_error, oracle_err, max_off_err});
  }
  return report;
}

// --- fixtures ---------------------------------------------------------------

namespace {

std::function<double(std::span<const int>)> table_reward(
    std::map<std::vector<int>, double> table) {
  return [table = std::move(table)](std::span<const int> response) {
    const std::vector<int> key(response.begin(), response.end());
    const auto it = table.find(key);
    if (it == table.end()) throw std::domain_error("reward: unknown response");
    return it->second;
  };
}

}  // namespace

std::vector<BatteryEntry> make_battery() {
  std::vector<BatteryEntry> battery;
  Rng rng(20260809);

  auto add = [&battery, &rng](std::string name, EnumerableTask task, int order) {
    task.validate();
    auto base = std::make_shared<model::TabularModel>(task.vocab_size, order, task.eos_id);
    Rng local = rng.split(std::hash<std::string>{}(name));
    for (double& p : base->params()) p = 0.8 * local.normal();
    battery.push_back({std::move(name), std::move(task), std::move(base)});
  };

  // Binary vocabulary {a, eos}, horizon 2: exactly the three completions
  // [a a], [a eos], [eos].
  {
    EnumerableTask t;
    t.vocab_size = 2;
    t.eos_id = 1;
    t.horizon = 2;
    t.reward = [](std::span<const int> r) {
      return (r.size() == 2 && r[0] == 0 && r[1] == 1) ? 1.0 : 0.0;
    };
    add("binary-h2", t, 1);
  }
  // Graded rewards on a three-token space.
  {
    EnumerableTask t;
    t.vocab_size = 3;
    t.eos_id = 2;
    t.horizon = 3;
    t.reward = [](std::span<const int> r) {
      double s = 0.0;
      for (int tok : r) s += (tok == 0) ? 0.9 : (tok == 1 ? -0.4 : 0.1);
      return s;
    };
    add("vocab3-h3-graded", t, 1);
  }
  // Prompted binary task, vocabulary 4.
  {
    EnumerableTask t;
    t.vocab_size = 4;
    t.eos_id = 3;
    t.prompt = {1, 0};
    t.horizon = 3;
    t.reward = [](std::span<const int> r) {
      return (r.size() == 3 && r[0] == 2 && r[1] == 0 && r[2] == 3) ? 1.0 : 0.0;
    };
    add("vocab4-h3-prompted", t, 2);
  }
  // Wide vocabulary, short horizon, graded.
  {
    EnumerableTask t;
    t.vocab_size = 6;
    t.eos_id = 5;
    t.horizon = 3;
    t.reward = [](std::span<const int> r) {
      int s = 0;
      for (int tok : r) s += tok;
      return 0.25 * static_cast<double>(s % 5) - 0.3;
    };
    add("vocab6-h3-graded", t, 1);
  }
  // Deep narrow space.
  {
    EnumerableTask t;
    t.vocab_size = 2;
    t.eos_id = 1;
    t.horizon = 6;
    t.reward = [](std::span<const int> r) {
      return static_cast<double>(r.size()) * 0.3 - (r.back() == 1 ? 0.2 : 0.0);
    };
    add("binary-h6-deep", t, 2);
  }
  // Constant reward: Gibbs reweighting must be a no-op.
  {
    EnumerableTask t;
    t.vocab_size = 3;
    t.eos_id = 2;
    t.horizon = 2;
    t.reward = [](std::span<const int>) { return 0.7; };
    add("vocab3-h2-constant", t, 1);
  }
  return battery;
}

EnumerableTask random_task(Rng& rng, int max_vocab, int max_horizon, bool binary_reward) {
  EnumerableTask task;
  task.vocab_size = 2 + rng.below(max_vocab - 1);
  task.eos_id = rng.below(task.vocab_size);
  task.horizon = 1 + rng.below(max_horizon);
  if (rng.below(2) == 1) {
    const int plen = 1 + rng.below(2);
    for (int i = 0; i < plen; ++i) task.prompt.push_back(rng.below(task.vocab_size));
  }
  task.reward = [](std::span<const int>) { return 0.0; };  // placeholder for enumeration

  const auto sequences = enumerate_sequences(task);
  std::map<std::vector<int>, double> table;
  bool any_positive = false;
  for (const auto& seq : sequences) {
    double r;
    if (binary_reward) {
      r = (rng.uniform() < 0.25) ? 1.0 : 0.0;
    } else {
      r = rng.normal();
    }
    any_positive |= (r != 0.0);
    table[seq] = r;
  }
  if (binary_reward && !any_positive) {
    table[sequences[rng.below(static_cast<int>(sequences.size()))]] = 1.0;
  }
  task.reward = table_reward(std::move(table));
  return task;
}

std::shared_ptr<model::PolicyModel> random_tabular_ref(Rng& rng, const EnumerableTask& task) {
  const int order = 1 + rng.below(2);
  auto base = std::make_shared<model::TabularModel>(task.vocab_size, order, task.eos_id);
  for (double& p : base->params()) p = rng.normal();
  return base;
}

std::vector<CheckLine> run_oracle_suite(Rng& rng) {
  std::vector<CheckLine> lines;
  const auto battery = make_battery();

  for (const auto& entry : battery) {
    const auto sequences = enumerate_sequences(entry.task);
    const auto base_dist_lp = sequence_log_probs(*entry.base, entry.task, sequences);
    SequenceDistribution base_dist;
    base_dist.log_probs = base_dist_lp;
    base_dist.log_partition = 0.0;

    // Gibbs optimality + partition identity.
    for (const double eta : {1.0, 2.5}) {
      Rng trial_rng = rng.split(std::hash<std::string>{}(entry.name) + static_cast<int>(10 * eta));
      const auto report = verify_gibbs_optimality(entry.task, base_dist, eta, 200, trial_rng);
      lines.push_back({entry.name + "/optimality-eta" + std::to_string(eta),
                       std::max(report.max_improvement, report.partition_identity_error),
                       report.pass});
    }

    // Two-stage consistency.
    for (const auto& [eta, lambda] : std::vector<std::pair<double, double>>{{2.0, 0.5}, {1.0, 0.9}, {5.0, 1.0}}) {
      const auto report = consistency_check(*entry.base, entry.task, eta, lambda);
      lines.push_back({entry.name + "/consistency-eta" + std::to_string(eta), report.tv_distance,
                       report.pass});
    }

    // Token-level exactness at every incomplete prefix.
    for (const double beta : {0.0, 1.0, 5.0}) {
      const SequenceDistribution gibbs = gibbs_policy(*entry.base, entry.task, beta);
      double max_err = 0.0;
      std::vector<std::vector<int>> prefixes{{}};
      for (std::size_t i = 0; i < prefixes.size(); ++i) {
        const std::vector<int> prefix = prefixes[i];
        const auto exact = exact_token_policy(*entry.base, entry.task, prefix, beta);
        const auto marginal = marginal_conditional(gibbs, sequences, prefix, entry.task.vocab_size);
        for (int v = 0; v < entry.task.vocab_size; ++v) {
          max_err = std::max(max_err, std::abs(exact[v] - marginal[v]));
        }
        for (int v = 0; v < entry.task.vocab_size; ++v) {
          std::vector<int> child = prefix;
          child.push_back(v);
          if (!entry.task.is_complete(child)) prefixes.push_back(std::move(child));
        }
      }
      lines.push_back({entry.name + "/token-exactness-beta" + std::to_string(beta), max_err,
                       max_err <= 1e-10});
    }

    // Semigroup: two stages compose additively in temperature.
    {
      const auto once = gibbs_policy(*entry.base, entry.task, 0.7 + 1.6);
      const auto staged = gibbs_policy(gibbs_policy(*entry.base, entry.task, 0.7), entry.task, 1.6);
      const double tv = num::total_variation(once.probs(), staged.probs());
      lines.push_back({entry.name + "/semigroup", tv, tv <= 1e-12});
    }

    // Reward shift invariance.
    {
      EnumerableTask shifted = entry.task;
      const auto inner = entry.task.reward;
      shifted.reward = [inner](std::span<const int> r) { return inner(r) + 11.25; };
      const auto a = gibbs_policy(*entry.base, entry.task, 1.3);
      const auto b = gibbs_policy(*entry.base, shifted, 1.3);
      const double tv = num::total_variation(a.probs(), b.probs());
      lines.push_back({entry.name + "/reward-shift-invariance", tv, tv <= 1e-12});
    }

    // soft_q at the empty prefix equals the log partition value.
    {
      const double beta = 2.0;
      const auto gibbs = gibbs_policy(*entry.base, entry.task, beta);
      const double q0 = soft_q(*entry.base, entry.task, {}, beta);
      const double err = std::abs(q0 - gibbs.log_partition);
      lines.push_back({entry.name + "/soft-q-partition", err, err <= 1e-10});
    }

    // Chained token conditionals reproduce the joint distribution.
    {
      const double beta = 1.5;
      const auto gibbs = gibbs_policy(*entry.base, entry.task, beta);
      double max_err = 0.0;
      for (std::size_t i = 0; i < sequences.size(); ++i) {
        double lp = 0.0;
        for (std::size_t t = 0; t < sequences[i].size(); ++t) {
          const std::span<const int> prefix(sequences[i].data(), t);
          const auto cond = exact_token_policy(*entry.base, entry.task, prefix, beta);
          lp += std::log(cond[sequences[i][t]]);
        }
        max_err = std::max(max_err, std::abs(std::exp(lp) - std::exp(gibbs.log_probs[i])));
      }
      lines.push_back({entry.name + "/chain-rule", max_err, max_err <= 1e-10});
    }
  }
  return lines;
}

}  // namespace giftlab::oracle
