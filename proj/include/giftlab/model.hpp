#pragma once

/**
 * Tiny autoregressive policies.
 *
 * Two concrete kinds share one interface: a tabular conditional model used
 * by the exact enumeration oracle, and a micro-transformer used by the
 * training experiments. Parameters live in one flat double array so the
 * optimizer and the finite-difference harness can treat every model alike.
 *
 * Forward convention: for input tokens[0..T-1], row t of the logits grid is
 * the next-token distribution conditioned on tokens[0..t].
 */

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "giftlab/grid.hpp"
#include "giftlab/rng.hpp"

namespace giftlab::model {

struct Vocabulary {
  int size = 0;
  int bos = -1;
  int eos = -1;
  int pad = -1;

  Vocabulary() = default;
  Vocabulary(int size_, int bos_, int eos_, int pad_);
};

struct TokenSequence {
  std::vector<int> prompt;
  std::vector<int> response;

  std::vector<int> joined() const {
    std::vector<int> out(prompt);
    out.insert(out.end(), response.begin(), response.end());
    return out;
  }
};

class PolicyModel {
 public:
  virtual ~PolicyModel() = default;

  virtual std::string kind() const = 0;
  virtual int vocab_size() const = 0;
  virtual int eos_id() const = 0;
  virtual int context_length() const = 0;

  virtual std::vector<double>& params() = 0;
  virtual const std::vector<double>& params() const = 0;
  int param_count() const { return static_cast<int>(params().size()); }

  // Pure forward: [T, V] logits, row t conditioned on tokens[0..t].
  virtual Grid forward(std::span<const int> tokens) const = 0;

  // Logits for the token following `context`. Tabular models accept an
  // empty context; the transformer requires at least one token.
  virtual std::vector<double> next_logits(std::span<const int> context) const = 0;

  // Forward pass that retains activations for a following backward().
  virtual const Grid& forward_train(std::span<const int> tokens) = 0;

  // Reverse-mode gradient of sum_{t,v} dlogits[t,v] * logits[t,v] with
  // respect to the parameters, accumulated into grad_out. Must follow a
  // forward_train call; dlogits must match its logits shape.
  virtual void backward(const Grid& dlogits, std::span<double> grad_out) = 0;

  // Last-layer post-block activations per position (before the final norm
  // and logits projection). Only the micro-transformer supports this.
  virtual Grid hidden_states(std::span<const int> tokens) const;

  virtual std::unique_ptr<PolicyModel> clone() const = 0;

 protected:
  void check_tokens(std::span<const int> tokens) const;
};

struct OptimizerState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;

  static OptimizerState for_model(const PolicyModel& m, double lr, double weight_decay = 0.0);
};

// One AdamW step with bias correction. Rejects non-finite gradients before
// touching the parameters.
void apply_update(PolicyModel& model, std::span<const double> grads, OptimizerState& state);

// Autoregressive sampling from softmax(logits / temperature), stopping at
// the model's eos id or after max_len generated tokens.
TokenSequence sample_sequence(const PolicyModel& model, std::span<const int> prompt,
                              double temperature, int max_len, Rng& rng);

}  // namespace giftlab::model
