#pragma once

/**
 * Experiment orchestration: pretrain -> fine-tune -> RL -> evaluation,
 * with checkpoints, JSON-lines metric streams, and a run manifest.
 *
 * Stages always hand models to the next stage through saved checkpoints, so
 * a full `run` is byte-equivalent to invoking the stage subcommands one by
 * one, and two runs with the same config and seed produce identical metric
 * streams.
 */

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "giftlab/analysis.hpp"
#include "giftlab/config.hpp"
#include "giftlab/gift.hpp"
#include "giftlab/model.hpp"
#include "giftlab/rl.hpp"
#include "giftlab/tasks.hpp"

namespace giftlab::pipeline {

inline constexpr const char* kCodeVersion = "giftlab-0.1.0";

// JSON-lines sink; every line carries {stage, step, seed, config_hash} so
// each number in each report is traceable to its run.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& file, std::string stage, std::uint64_t seed,
                std::string config_hash);
  void write(int step, nlohmann::json fields);

 private:
  std::ofstream out_;
  std::string stage_;
  std::uint64_t seed_;
  std::string config_hash_;
};

struct StageInfo {
  std::string name;
  std::string checkpoint;  // empty when the stage produces none
  double wall_seconds = 0.0;
};

struct RunManifest {
  nlohmann::json config_snapshot;
  std::string config_hash;
  std::string dataset_hash;
  std::string code_version = kCodeVersion;
  std::string status = "running";
  std::vector<StageInfo> stages;

  // Hash over everything except wall-clock timings: equal for two runs
  // with the same config and seed.
  std::string content_hash() const;
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& file) const;
};

// Method dispatch for the fine-tuning stage. base may be null for methods
// that do not consult it.
gift::LossResult method_loss(const io::ExperimentConfig::Sft& cfg, model::PolicyModel& m,
                             const model::PolicyModel* base,
                             std::span<const model::TokenSequence> batch);

// Pre-trains the micro-transformer on the mixed synthetic corpus.
std::unique_ptr<model::PolicyModel> pretrain_base(const io::ExperimentConfig& cfg,
                                                  MetricsWriter* metrics);

struct SftOutcome {
  std::unique_ptr<model::PolicyModel> model;  // parameters from the selected epoch
  int selected_epoch = 0;                     // 1-based
  std::vector<double> val_losses;             // one per epoch
};

// Fine-tunes a copy of `base` with the configured method; selects the
// epoch with minimum validation loss unless sft.select_epoch pins one.
SftOutcome train_sft_stage(const io::ExperimentConfig& cfg, const model::PolicyModel& base,
                           const tasks::DatasetSplits& splits, MetricsWriter* metrics);

std::vector<rl::StepRecord> train_rl_stage(const io::ExperimentConfig& cfg, model::PolicyModel& m,
                                           const tasks::DatasetSplits& splits,
                                           MetricsWriter* metrics);

analysis::PassAtKReport eval_stage(const io::ExperimentConfig& cfg, const model::PolicyModel& m,
                                   const tasks::DatasetSplits& splits);

nlohmann::json pass_report_json(const analysis::PassAtKReport& report);
nlohmann::json consistency_report_json(const analysis::ConsistencyReport& report);

// Full pipeline; refuses to reuse an output directory unless overwrite is
// set. On stage failure the manifest is finalized as failed and the error
// rethrown.
RunManifest run_pipeline(const io::ExperimentConfig& cfg, bool overwrite);

}  // namespace giftlab::pipeline
