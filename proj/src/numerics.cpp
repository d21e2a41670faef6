#include "giftlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace giftlab::num {

void check_finite(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw std::invalid_argument(std::string(what) + ": non-finite entry at index " + std::to_string(i));
    }
  }
}

void check_prob_vector(std::span<const double> p, const char* what, double tol) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0) || p[i] > 1.0 + tol) {
      throw std::invalid_argument(std::string(what) + ": entry out of [0,1] at index " + std::to_string(i));
    }
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > tol) {
    throw std::invalid_argument(std::string(what) + ": entries sum to " + std::to_string(sum));
  }
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty vector");
  check_finite(v, "log_sum_exp");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (const double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void log_softmax_into(std::span<const double> v, std::span<double> out) {
  const double lse = log_sum_exp(v);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
}

std::vector<double> log_softmax(std::span<const double> v) {
  std::vector<double> out(v.size());
  log_softmax_into(v, out);
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out = log_softmax(logits);
  for (double& x : out) x = std::exp(x);
  return out;
}

double soft_cross_entropy(std::span<const double> target, std::span<const double> model_logprobs) {
  if (target.size() != model_logprobs.size()) {
    throw std::invalid_argument("soft_cross_entropy: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != 0.0) acc -= target[i] * model_logprobs[i];
  }
  return acc;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (const double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] <= 0.0) {
      throw std::domain_error("kl_divergence: support violation at index " + std::to_string(i));
    }
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size() && i < q.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss_fn,
                           std::span<const double> params,
                           std::span<const double> analytic,
                           double step) {
  if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: length mismatch");
  if (step < 1e-7 || step > 1e-4) throw std::invalid_argument("grad_check: step outside [1e-7, 1e-4]");

  GradCheckReport report;
  std::vector<double> probe(params.begin(), params.end());
  for (std::size_t i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + step;
    const double up = loss_fn(probe);
    probe[i] = params[i] - step;
    const double down = loss_fn(probe);
    probe[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      report.finite = false;
      report.max_rel_error = std::numeric_limits<double>::infinity();
      report.worst_coord = i;
      return report;
    }
    const double central = (up - down) / (2.0 * step);
    const double rel = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coord = i;
    }
  }
  return report;
}

}  // namespace giftlab::num
