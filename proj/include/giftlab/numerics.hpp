#pragma once

/**
 * Log-space probability primitives shared by every module.
 *
 * All distribution work happens on log scale; probability vectors are
 * materialized only at interfaces. Everything is double precision and pure.
 */

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace giftlab::num {

// log(sum_i exp(v[i])), shifted by max(v) so large logits never overflow.
// Throws std::invalid_argument on an empty or non-finite input.
double log_sum_exp(std::span<const double> v);

// v - log_sum_exp(v). Exponentiating the result gives a valid probability
// vector.
std::vector<double> log_softmax(std::span<const double> v);

// In-place variant writing into `out` (same length as v).
void log_softmax_into(std::span<const double> v, std::span<double> out);

// exp of each entry of the log-probability vector.
std::vector<double> softmax(std::span<const double> logits);

// -sum_v target[v] * model_logprobs[v]. `target` must be a probability
// vector, `model_logprobs` a log_softmax output of equal length.
double soft_cross_entropy(std::span<const double> target, std::span<const double> model_logprobs);

// Shannon entropy -sum p ln p with the 0 ln 0 := 0 convention.
double entropy(std::span<const double> p);

// sum_v p[v] ln(p[v]/q[v]) with 0 ln 0 := 0. Throws std::domain_error
// naming the offending index when p has mass where q has none.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Total-variation distance (1/2) sum |p - q|.
double total_variation(std::span<const double> p, std::span<const double> q);

// Validation at interface boundaries. Throw std::invalid_argument.
void check_finite(std::span<const double> v, const char* what);
void check_prob_vector(std::span<const double> p, const char* what, double tol = 1e-9);

struct GradCheckReport {
  double max_rel_error = 0.0;  // max_i |analytic_i - central_i| / max(1, |analytic_i|)
  std::size_t worst_coord = 0;
  bool finite = true;  // false if the loss evaluated non-finite at some probe
};

// Central-difference check of `analytic` against `loss_fn`, probing every
// coordinate of `params` at +/- step. step must lie in [1e-7, 1e-4].
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss_fn,
                           std::span<const double> params,
                           std::span<const double> analytic,
                           double step = 1e-6);

}  // namespace giftlab::num
