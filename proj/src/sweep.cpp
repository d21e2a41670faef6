#include "giftlab/analysis.hpp"
#include "giftlab/checkpoint.hpp"
#include "giftlab/pipeline.hpp"

namespace giftlab::analysis {

SweepTable sweep_beta(const io::ExperimentConfig& base_config, std::span<const double> betas,
                      std::span<const std::uint64_t> seeds) {
  // Every cell shares one dataset and one base checkpoint; only the
  // fine-tune/RL/eval streams move with the cell seed.
  const auto splits = tasks::generate_dataset(base_config.task, base_config.data, base_config.seed);
  std::unique_ptr<model::PolicyModel> base;
  if (base_config.base_checkpoint.empty()) {
    base = pipeline::pretrain_base(base_config, nullptr);
  } else {
    base = io::load_checkpoint(base_config.base_checkpoint);
  }

  SweepTable table;
  for (const double beta : betas) {
    std::vector<double> p1s, p8s;
    for (const std::uint64_t seed : seeds) {
      SweepCell cell;
      cell.beta = beta;
      cell.seed = seed;
      try {
        io::ExperimentConfig cfg = base_config;
        cfg.seed = seed;
        cfg.sft.method = "gift";
        cfg.sft.beta = beta;

        auto outcome = pipeline::train_sft_stage(cfg, *base, splits, nullptr);
        std::unique_ptr<model::PolicyModel> m = std::move(outcome.model);
        if (cfg.rl.steps > 0 || cfg.rl.epochs > 0) {
          const auto records = pipeline::train_rl_stage(cfg, *m, splits, nullptr);
          if (!records.empty()) cell.final_reward = records.back().mean_reward;
        }
        const auto report = pipeline::eval_stage(cfg, *m, splits);
        cell.pass1 = report.estimates.at(1);
        const int k_hi = report.estimates.count(8) ? 8 : report.k_list.back();
        cell.pass8 = report.estimates.at(k_hi);
        cell.status = "ok";
        p1s.push_back(cell.pass1);
        p8s.push_back(cell.pass8);
      } catch (const std::exception& e) {
        cell.status = std::string("failed: ") + e.what();
      }
      table.cells.push_back(cell);
    }
    if (!p1s.empty()) {
      table.median_pass1[beta] = median(p1s);
      table.median_pass8[beta] = median(p8s);
    }
  }
  return table;
}

}  // namespace giftlab::analysis
