#include "giftlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "giftlab/numerics.hpp"

namespace giftlab::analysis {

double pass_at_k(int n, int c, int k) {
  if (n < 0 || c < 0 || c > n) throw std::invalid_argument("pass_at_k: need 0 <= c <= n");
  if (k < 1 || k > n) throw std::domain_error("pass_at_k: need 1 <= k <= n");
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;
  // log C(n-c, k) - log C(n, k)
  double log_ratio = 0.0;
  for (int i = 0; i < k; ++i) {
    log_ratio += std::log(static_cast<double>(n - c - i)) - std::log(static_cast<double>(n - i));
  }
  return 1.0 - std::exp(log_ratio);
}

namespace {

std::vector<int> top_k_ids(std::span<const double> p, int k) {
  std::vector<int> ids(p.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&p](int a, int b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;  // ties by ascending token id
  });
  ids.resize(k);
  return ids;
}

// (row, next token) pairs covering the response positions of a sequence.
std::vector<std::pair<int, int>> response_rows(const model::TokenSequence& seq) {
  std::vector<std::pair<int, int>> out;
  const auto joined = seq.joined();
  for (std::size_t j = seq.prompt.size(); j < joined.size(); ++j) {
    out.emplace_back(static_cast<int>(j) - 1, joined[j]);
  }
  return out;
}

}  // namespace

double topk_overlap(std::span<const double> p, std::span<const double> q, int k) {
  if (p.size() != q.size()) throw std::invalid_argument("topk_overlap: length mismatch");
  if (k < 1 || k > static_cast<int>(p.size())) throw std::domain_error("topk_overlap: k out of range");
  const auto a = top_k_ids(p, k);
  const auto b = top_k_ids(q, k);
  int shared = 0;
  for (int id : a) {
    if (std::find(b.begin(), b.end(), id) != b.end()) shared++;
  }
  return static_cast<double>(shared) / k;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("l2_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double model_kl(const model::PolicyModel& a, const model::PolicyModel& b,
                std::span<const model::TokenSequence> eval_set) {
  if (a.vocab_size() != b.vocab_size()) throw std::invalid_argument("model_kl: vocabulary mismatch");
  if (eval_set.empty()) throw std::invalid_argument("model_kl: empty eval set");
  double total = 0.0;
  long count = 0;
  for (const auto& seq : eval_set) {
    const auto joined = seq.joined();
    const Grid la = a.forward(joined);
    const Grid lb = b.forward(joined);
    for (const auto& [row, tok] : response_rows(seq)) {
      (void)tok;
      total += num::kl_divergence(num::softmax(la.row_span(row)), num::softmax(lb.row_span(row)));
      count++;
    }
  }
  if (count == 0) throw std::invalid_argument("model_kl: eval set has no response tokens");
  return total / static_cast<double>(count);
}

double mean_topk_overlap(const model::PolicyModel& a, const model::PolicyModel& b,
                         std::span<const model::TokenSequence> eval_set, int k) {
  double total = 0.0;
  long count = 0;
  for (const auto& seq : eval_set) {
    const auto joined = seq.joined();
    const Grid la = a.forward(joined);
    const Grid lb = b.forward(joined);
    for (const auto& [row, tok] : response_rows(seq)) {
      (void)tok;
      total += topk_overlap(num::softmax(la.row_span(row)), num::softmax(lb.row_span(row)), k);
      count++;
    }
  }
  if (count == 0) throw std::invalid_argument("mean_topk_overlap: eval set has no response tokens");
  return total / static_cast<double>(count);
}

RepSimilarity rep_similarity(const model::PolicyModel& a, const model::PolicyModel& b,
                             std::span<const model::TokenSequence> eval_set) {
  if (eval_set.empty()) throw std::invalid_argument("rep_similarity: empty eval set");
  RepSimilarity out;
  long count = 0;
  for (const auto& seq : eval_set) {
    const auto joined = seq.joined();
    const Grid ha = a.hidden_states(joined);
    const Grid hb = b.hidden_states(joined);
    if (ha.cols() != hb.cols()) throw std::invalid_argument("rep_similarity: width mismatch");

    // Mean-pool rows at response token positions.
    std::vector<double> pa(ha.cols(), 0.0), pb(hb.cols(), 0.0);
    int rows = 0;
    for (std::size_t pos = seq.prompt.size(); pos < joined.size(); ++pos) {
      for (int i = 0; i < ha.cols(); ++i) {
        pa[i] += ha.at(static_cast<int>(pos), i);
        pb[i] += hb.at(static_cast<int>(pos), i);
      }
      rows++;
    }
    if (rows == 0) continue;
    for (double& x : pa) x /= rows;
    for (double& x : pb) x /= rows;

    out.cosine += cosine_similarity(pa, pb);
    out.l2 += l2_distance(pa, pb);
    count++;
  }
  if (count == 0) throw std::invalid_argument("rep_similarity: eval set has no response tokens");
  out.cosine /= static_cast<double>(count);
  out.l2 /= static_cast<double>(count);
  return out;
}

ConsistencyReport consistency_report(const std::string& stage, const model::PolicyModel& earlier,
                                     const model::PolicyModel& later,
                                     std::span<const model::TokenSequence> eval_set,
                                     std::span<const int> topk_list, bool kl_later_first) {
  ConsistencyReport report;
  report.stage = stage;
  report.direction = kl_later_first ? "later||earlier" : "earlier||later";
  report.kl = kl_later_first ? model_kl(later, earlier, eval_set) : model_kl(earlier, later, eval_set);
  const RepSimilarity rep = rep_similarity(earlier, later, eval_set);
  report.cosine = rep.cosine;
  report.l2 = rep.l2;
  for (int k : topk_list) {
    if (k < 1 || k > earlier.vocab_size()) continue;  // clip the grid to the vocabulary
    report.topk[k] = mean_topk_overlap(earlier, later, eval_set, k);
  }
  return report;
}

PassAtKReport evaluate_pass_at_k(const model::PolicyModel& m, const tasks::TaskSpec& task,
                                 std::span<const std::vector<int>> prompts, int n_samples,
                                 double temperature, std::span<const int> k_list, int max_new_tokens,
                                 Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("evaluate_pass_at_k: need n_samples >= 1");
  PassAtKReport report;
  report.k_list.assign(k_list.begin(), k_list.end());
  report.temperature = temperature;
  report.samples = n_samples;
  for (int k : k_list) {
    if (k > n_samples) throw std::domain_error("evaluate_pass_at_k: k exceeds sample count");
    report.estimates[k] = 0.0;
  }

  for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
    const auto& prompt = prompts[pi];
    const int budget = std::min(max_new_tokens, m.context_length() - static_cast<int>(prompt.size()));
    Rng prompt_rng = rng.split(pi);
    int correct = 0;
    for (int s = 0; s < n_samples; ++s) {
      const auto seq = model::sample_sequence(m, prompt, temperature, budget, prompt_rng);
      if (tasks::reward(task, seq.prompt, seq.response) == 1.0) correct++;
    }
    report.per_prompt.emplace_back(n_samples, correct);
    for (int k : k_list) report.estimates[k] += pass_at_k(n_samples, correct, k);
  }
  if (!prompts.empty()) {
    for (auto& [k, v] : report.estimates) v /= static_cast<double>(prompts.size());
  }
  return report;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string sweep_csv(const SweepTable& table) {
  std::string out = "beta,seed,status,pass1,pass8,final_reward\n";
  char buf[256];
  for (const auto& cell : table.cells) {
    std::snprintf(buf, sizeof(buf), "%.17g,%llu,%s,%.17g,%.17g,%.17g\n", cell.beta,
                  static_cast<unsigned long long>(cell.seed), cell.status.c_str(), cell.pass1,
                  cell.pass8, cell.final_reward);
    out += buf;
  }
  for (const auto& [beta, p1] : table.median_pass1) {
    std::snprintf(buf, sizeof(buf), "%.17g,median,ok,%.17g,%.17g,\n", beta, p1,
                  table.median_pass8.at(beta));
    out += buf;
  }
  return out;
}

}  // namespace giftlab::analysis
