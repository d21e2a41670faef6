#include "giftlab/tabular.hpp"

#include <stdexcept>
#include <string>

namespace giftlab::model {

TabularModel::TabularModel(int vocab_size, int order, int eos_id)
    : vocab_(vocab_size), order_(order), eos_(eos_id) {
  if (vocab_size < 2) throw std::invalid_argument("TabularModel: vocab size must be >= 2");
  if (order < 0 || order > 8) throw std::invalid_argument("TabularModel: order must be in [0, 8]");
  if (eos_id < -1 || eos_id >= vocab_size) throw std::invalid_argument("TabularModel: bad eos id");
  long long r = 1;
  for (int i = 0; i < order; ++i) {
    r *= vocab_size + 1;
    if (r * vocab_size > (1LL << 28)) throw std::invalid_argument("TabularModel: table too large");
  }
  rows_ = static_cast<int>(r);
  table_.assign(static_cast<std::size_t>(rows_) * vocab_, 0.0);
}

int TabularModel::row_index(std::span<const int> context) const {
  // Most recent token is the lowest digit; pre-start slots use marker V.
  const int marker = vocab_;
  int idx = 0;
  int stride = 1;
  const int n = static_cast<int>(context.size());
  for (int i = 0; i < order_; ++i) {
    const int sym = (n - 1 - i >= 0) ? context[n - 1 - i] : marker;
    idx += sym * stride;
    stride *= vocab_ + 1;
  }
  return idx;
}

Grid TabularModel::forward(std::span<const int> tokens) const {
  check_tokens(tokens);
  Grid logits(static_cast<int>(tokens.size()), vocab_);
  for (int t = 0; t < logits.rows(); ++t) {
    const int row = row_index(tokens.subspan(0, t + 1));
    const double* src = table_.data() + static_cast<std::size_t>(row) * vocab_;
    double* dst = logits.row(t);
    for (int v = 0; v < vocab_; ++v) dst[v] = src[v];
  }
  return logits;
}

std::vector<double> TabularModel::next_logits(std::span<const int> context) const {
  check_tokens(context);
  const int row = row_index(context);
  const double* src = table_.data() + static_cast<std::size_t>(row) * vocab_;
  return std::vector<double>(src, src + vocab_);
}

const Grid& TabularModel::forward_train(std::span<const int> tokens) {
  cached_logits_ = forward(tokens);
  cached_tokens_.assign(tokens.begin(), tokens.end());
  has_cache_ = true;
  return cached_logits_;
}

void TabularModel::backward(const Grid& dlogits, std::span<double> grad_out) {
  if (!has_cache_) throw std::logic_error("TabularModel::backward without forward_train");
  if (dlogits.rows() != cached_logits_.rows() || dlogits.cols() != vocab_) {
    throw std::domain_error("TabularModel::backward: gradient shape mismatch");
  }
  if (grad_out.size() != table_.size()) {
    throw std::domain_error("TabularModel::backward: grad_out size mismatch");
  }
  for (int t = 0; t < dlogits.rows(); ++t) {
    const int row = row_index(std::span<const int>(cached_tokens_).subspan(0, t + 1));
    const double* src = dlogits.row(t);
    double* dst = grad_out.data() + static_cast<std::size_t>(row) * vocab_;
    for (int v = 0; v < vocab_; ++v) dst[v] += src[v];
  }
}

std::unique_ptr<PolicyModel> TabularModel::clone() const {
  return std::make_unique<TabularModel>(*this);
}

}  // namespace giftlab::model
