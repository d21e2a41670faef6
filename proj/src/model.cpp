#include "giftlab/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "giftlab/numerics.hpp"

namespace giftlab::model {

Vocabulary::Vocabulary(int size_, int bos_, int eos_, int pad_)
    : size(size_), bos(bos_), eos(eos_), pad(pad_) {
  if (size < 3) throw std::invalid_argument("Vocabulary: size must be >= 3");
  auto in_range = [&](int id) { return id >= 0 && id < size; };
  if (!in_range(bos) || !in_range(eos) || !in_range(pad)) {
    throw std::invalid_argument("Vocabulary: special ids must be < size");
  }
  if (bos == eos || bos == pad || eos == pad) {
    throw std::invalid_argument("Vocabulary: special ids must be distinct");
  }
}

void PolicyModel::check_tokens(std::span<const int> tokens) const {
  const int v = vocab_size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= v) {
      throw std::domain_error("token id out of vocabulary at position " + std::to_string(i));
    }
  }
  if (static_cast<int>(tokens.size()) > context_length()) {
    throw std::domain_error("input length " + std::to_string(tokens.size()) +
                            " exceeds context length " + std::to_string(context_length()));
  }
}

Grid PolicyModel::hidden_states(std::span<const int>) const {
  throw std::logic_error("hidden_states: unsupported for model kind '" + kind() + "'");
}

OptimizerState OptimizerState::for_model(const PolicyModel& m, double lr, double weight_decay_) {
  OptimizerState s;
  s.first_moment.assign(m.params().size(), 0.0);
  s.second_moment.assign(m.params().size(), 0.0);
  s.learning_rate = lr;
  s.weight_decay = weight_decay_;
  return s;
}

void apply_update(PolicyModel& model, std::span<const double> grads, OptimizerState& state) {
  auto& params = model.params();
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw std::invalid_argument("apply_update: shape mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw std::domain_error("apply_update: non-finite gradient at index " + std::to_string(i));
    }
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
    state.second_moment[i] = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.first_moment[i] / bc1;
    const double v_hat = state.second_moment[i] / bc2;
    params[i] -= state.learning_rate * (m_hat / (std::sqrt(v_hat) + state.eps) +
                                        state.weight_decay * params[i]);
  }
}

TokenSequence sample_sequence(const PolicyModel& model, std::span<const int> prompt,
                              double temperature, int max_len, Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_sequence: temperature must be > 0");
  if (max_len < 1) throw std::invalid_argument("sample_sequence: max_len must be >= 1");

  TokenSequence seq;
  seq.prompt.assign(prompt.begin(), prompt.end());
  std::vector<int> context(prompt.begin(), prompt.end());
  const int eos = model.eos_id();

  for (int step = 0; step < max_len; ++step) {
    std::vector<double> logits = model.next_logits(context);
    for (double& z : logits) z /= temperature;
    const std::vector<double> probs = num::softmax(logits);
    const int tok = rng.categorical(probs);
    seq.response.push_back(tok);
    context.push_back(tok);
    if (tok == eos) break;
  }
  return seq;
}

}  // namespace giftlab::model
