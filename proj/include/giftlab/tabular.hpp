#pragma once

#include "giftlab/model.hpp"

namespace giftlab::model {

// Order-k conditional table: one logit row per context window. Context
// positions before the sequence start are encoded with a reserved marker,
// so the table has (vocab+1)^order rows of vocab logits. Exact by
// construction; this is the reference model for all enumeration oracles.
class TabularModel final : public PolicyModel {
 public:
  TabularModel(int vocab_size, int order, int eos_id);

  std::string kind() const override { return "tabular"; }
  int vocab_size() const override { return vocab_; }
  int eos_id() const override { return eos_; }
  int context_length() const override { return 1 << 24; }
  int order() const { return order_; }
  int rows() const { return rows_; }

  std::vector<double>& params() override { return table_; }
  const std::vector<double>& params() const override { return table_; }

  Grid forward(std::span<const int> tokens) const override;
  std::vector<double> next_logits(std::span<const int> context) const override;
  const Grid& forward_train(std::span<const int> tokens) override;
  void backward(const Grid& dlogits, std::span<double> grad_out) override;
  std::unique_ptr<PolicyModel> clone() const override;

  // Row index for the k tokens preceding the prediction slot.
  int row_index(std::span<const int> context) const;

 private:
  int vocab_;
  int order_;
  int eos_;
  int rows_;
  std::vector<double> table_;

  Grid cached_logits_;
  std::vector<int> cached_tokens_;
  bool has_cache_ = false;
};

}  // namespace giftlab::model
