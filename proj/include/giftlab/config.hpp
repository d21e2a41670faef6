#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "giftlab/rl.hpp"
#include "giftlab/tasks.hpp"
#include "giftlab/transformer.hpp"

namespace giftlab::io {

// One JSON file drives every stage; --set key=value overrides individual
// fields. The seed is mandatory for reproducibility.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/default";

  tasks::TaskSpec task;
  tasks::SplitSizes data;
  model::TransformerArch arch;

  struct Pretrain {
    int sequences = 2000;
    int epochs = 3;
    double lr = 3e-3;
    int batch = 16;
    std::uint64_t corpus_seed_offset = 1000003;
  } pretrain;

  struct Sft {
    std::string method = "gift";  // none | sft | gift | entropy | label-smoothing | kd
    double beta = 5.0;            // gift
    double epsilon = 0.01;        // label-smoothing
    double lambda_h = 0.01;       // entropy
    double alpha = 0.1;           // kd
    int epochs = 10;
    double lr = 1e-3;
    int batch = 16;
    int select_epoch = 0;  // 0 picks the epoch with minimum validation loss
    bool mask_prompt = true;
    bool token_mean = true;
    std::string train_on = "sft";  // "sft" or "sft+rl" (direct-SFT baseline)
  } sft;

  rl::RlConfig rl;

  struct Eval {
    double temperature = 0.6;
    int samples = 16;
    std::vector<int> k_list{1, 2, 4, 8};
    std::vector<int> topk_list{1, 5, 10, 50, 100};
    int max_new_tokens = 16;
  } eval;

  std::string base_checkpoint;  // reuse an existing base instead of pretraining

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  std::string config_hash() const;
};

// Dot-path override, e.g. "sft.beta=10" or "eval.k_list=[1,2]". Values parse
// as JSON when possible, otherwise as strings.
void apply_override(nlohmann::json& j, const std::string& spec);

// Load from file (or defaults when path is empty), apply overrides, and
// enforce that method-specific fields are only set for the active method.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

}  // namespace giftlab::io
