#pragma once

#include <cstdint>

#include "giftlab/model.hpp"

namespace giftlab::model {

struct TransformerArch {
  int width = 32;
  int heads = 2;
  int layers = 2;
  int context = 64;
};

// Pre-norm decoder with learned positional embeddings and an untied output
// head. Gradients are hand-derived reverse mode over the flat parameter
// array; grad_check validates them against central differences.
class MicroTransformer final : public PolicyModel {
 public:
  MicroTransformer(Vocabulary vocab, TransformerArch arch, std::uint64_t init_seed);

  std::string kind() const override { return "micro-transformer"; }
  int vocab_size() const override { return vocab_.size; }
  int eos_id() const override { return vocab_.eos; }
  int context_length() const override { return arch_.context; }
  const Vocabulary& vocab() const { return vocab_; }
  const TransformerArch& arch() const { return arch_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::vector<double>& params() override { return params_; }
  const std::vector<double>& params() const override { return params_; }

  Grid forward(std::span<const int> tokens) const override;
  std::vector<double> next_logits(std::span<const int> context) const override;
  const Grid& forward_train(std::span<const int> tokens) override;
  void backward(const Grid& dlogits, std::span<double> grad_out) override;
  Grid hidden_states(std::span<const int> tokens) const override;
  std::unique_ptr<PolicyModel> clone() const override;

 private:
  struct LayerOffsets {
    std::size_t ln1_g, ln1_b;
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_g, ln2_b;
    std::size_t w_fc, b_fc, w_proj, b_proj;
  };

  struct LayerCache {
    Grid x_in;               // [T, D] residual stream entering the layer
    std::vector<double> ln1_mean, ln1_rstd;
    Grid a;                  // [T, D] ln1 output
    Grid q, k, v;            // [T, D]
    std::vector<Grid> probs; // per head [T, T] causal attention weights
    Grid ctx;                // [T, D] attention-weighted values
    Grid x_mid;              // [T, D] after attention residual
    std::vector<double> ln2_mean, ln2_rstd;
    Grid b;                  // [T, D] ln2 output
    Grid fc;                 // [T, F] pre-activation
    Grid gelu;               // [T, F]
  };

  struct Cache {
    std::vector<int> tokens;
    std::vector<LayerCache> layers;
    Grid h_final;            // [T, D] post last block
    std::vector<double> lnf_mean, lnf_rstd;
    Grid hn;                 // [T, D] final norm output
    Grid logits;             // [T, V]
  };

  void run_forward(std::span<const int> tokens, Cache& cache) const;
  void init_params(std::uint64_t seed);

  Vocabulary vocab_;
  TransformerArch arch_;
  std::uint64_t init_seed_;
  int ffn_width_;
  std::vector<double> params_;

  std::size_t off_wte_, off_wpe_;
  std::vector<LayerOffsets> layer_off_;
  std::size_t off_lnf_g_, off_lnf_b_, off_w_head_, off_b_head_;

  Cache cache_;
  bool has_cache_ = false;
};

}  // namespace giftlab::model
