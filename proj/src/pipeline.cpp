#include "giftlab/pipeline.hpp"

#include <chrono>
#include <stdexcept>

#include "giftlab/checkpoint.hpp"
#include "giftlab/numerics.hpp"
#include "giftlab/transformer.hpp"

namespace giftlab::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t base_init_seed(const io::ExperimentConfig& cfg) {
  return cfg.seed * 0x9E3779B97F4A7C15ULL + 17;
}

}  // namespace

MetricsWriter::MetricsWriter(const std::filesystem::path& file, std::string stage,
                             std::uint64_t seed, std::string config_hash)
    : stage_(std::move(stage)), seed_(seed), config_hash_(std::move(config_hash)) {
  std::filesystem::create_directories(file.parent_path());
  out_.open(file);
  if (!out_) throw std::runtime_error("MetricsWriter: cannot open " + file.string());
}

void MetricsWriter::write(int step, nlohmann::json fields) {
  fields["stage"] = stage_;
  fields["step"] = step;
  fields["seed"] = seed_;
  fields["config_hash"] = config_hash_;
  out_ << fields.dump() << "\n";
  out_.flush();
}

std::string RunManifest::content_hash() const {
  nlohmann::json stable = nlohmann::json::array();
  for (const auto& s : stages) stable.push_back({{"name", s.name}, {"checkpoint", s.checkpoint}});
  const std::string text = config_snapshot.dump() + config_hash + dataset_hash + code_version +
                           status + stable.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json stages_json = nlohmann::json::array();
  for (const auto& s : stages) {
    stages_json.push_back(
        {{"name", s.name}, {"checkpoint", s.checkpoint}, {"wall_seconds", s.wall_seconds}});
  }
  return nlohmann::json{{"schema_version", 1},
                        {"code_version", code_version},
                        {"config", config_snapshot},
                        {"config_hash", config_hash},
                        {"dataset_hash", dataset_hash},
                        {"status", status},
                        {"content_hash", content_hash()},
                        {"stages", stages_json}};
}

void RunManifest::write(const std::filesystem::path& file) const {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw std::runtime_error("RunManifest: cannot write " + file.string());
  out << to_json().dump(2) << "\n";
}

gift::LossResult method_loss(const io::ExperimentConfig::Sft& cfg, model::PolicyModel& m,
                             const model::PolicyModel* base,
                             std::span<const model::TokenSequence> batch) {
  if (cfg.method == "sft") {
    return gift::sft_loss(m, batch, cfg.mask_prompt, cfg.token_mean);
  }
  if (cfg.method == "gift") {
    if (base == nullptr) throw std::invalid_argument("method_loss: gift needs a base model");
    gift::GiftConfig gc;
    gc.beta = cfg.beta;
    gc.mask_prompt = cfg.mask_prompt;
    gc.token_mean = cfg.token_mean;
    return gift::gift_loss(m, *base, batch, gc);
  }
  if (cfg.method == "entropy") {
    return gift::entropy_reg_loss(m, batch, cfg.lambda_h, cfg.mask_prompt, cfg.token_mean);
  }
  if (cfg.method == "label-smoothing") {
    return gift::label_smoothing_loss(m, batch, cfg.epsilon, cfg.mask_prompt, cfg.token_mean);
  }
  if (cfg.method == "kd") {
    if (base == nullptr) throw std::invalid_argument("method_loss: kd needs a base model");
    return gift::kd_loss(m, *base, batch, cfg.alpha, cfg.mask_prompt, cfg.token_mean);
  }
  throw std::invalid_argument("method_loss: no loss for method '" + cfg.method + "'");
}

std::unique_ptr<model::PolicyModel> pretrain_base(const io::ExperimentConfig& cfg,
                                                  MetricsWriter* metrics) {
  const auto corpus =
      tasks::pretrain_corpus(cfg.pretrain.sequences, cfg.seed + cfg.pretrain.corpus_seed_offset);
  auto m = std::make_unique<model::MicroTransformer>(tasks::vocabulary(), cfg.arch,
                                                     base_init_seed(cfg));
  auto opt = model::OptimizerState::for_model(*m, cfg.pretrain.lr, 0.01);
  Rng rng = Rng(cfg.seed).split(1);

  std::vector<int> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.pretrain.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.pretrain.batch) {
      std::vector<model::TokenSequence> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.pretrain.batch); ++i) {
        batch.push_back(corpus[order[i]]);
      }
      // Language-model objective over all positions, prompt included.
      const auto res = gift::sft_loss(*m, batch, /*mask_prompt=*/false, /*token_mean=*/true);
      model::apply_update(*m, res.grads, opt);
      epoch_loss += res.loss;
      batches++;
    }
    if (metrics) metrics->write(epoch, {{"train_loss", epoch_loss / batches}});
  }
  return m;
}

SftOutcome train_sft_stage(const io::ExperimentConfig& cfg, const model::PolicyModel& base,
                           const tasks::DatasetSplits& splits, MetricsWriter* metrics) {
  std::vector<model::TokenSequence> train_set = splits.sft;
  if (cfg.sft.train_on == "sft+rl") {
    train_set.insert(train_set.end(), splits.rl_full.begin(), splits.rl_full.end());
  }
  if (train_set.empty()) throw std::invalid_argument("train_sft_stage: empty training set");

  SftOutcome outcome;
  auto m = base.clone();
  auto opt = model::OptimizerState::for_model(*m, cfg.sft.lr, 0.01);
  Rng rng = Rng(cfg.seed).split(2);

  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  std::unique_ptr<model::PolicyModel> best;
  double best_val = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.sft.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.sft.batch) {
      std::vector<model::TokenSequence> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.sft.batch); ++i) {
        batch.push_back(train_set[order[i]]);
      }
      const auto res = method_loss(cfg.sft, *m, &base, batch);
      model::apply_update(*m, res.grads, opt);
      epoch_loss += res.loss;
      batches++;
    }

    double val_loss = 0.0;
    if (!splits.validation.empty()) {
      val_loss = method_loss(cfg.sft, *m, &base, splits.validation).loss;
    }
    outcome.val_losses.push_back(val_loss);
    if (metrics) {
      metrics->write(epoch, {{"train_loss", epoch_loss / batches}, {"val_loss", val_loss}});
    }

    const bool pinned = cfg.sft.select_epoch > 0;
    if ((pinned && epoch == cfg.sft.select_epoch) || (!pinned && val_loss < best_val)) {
      best_val = val_loss;
      best = m->clone();
      outcome.selected_epoch = epoch;
    }
  }

  if (!best) {  // select_epoch beyond the last epoch: keep the final model
    best = m->clone();
    outcome.selected_epoch = cfg.sft.epochs;
  }
  outcome.model = std::move(best);
  return outcome;
}

std::vector<rl::StepRecord> train_rl_stage(const io::ExperimentConfig& cfg, model::PolicyModel& m,
                                           const tasks::DatasetSplits& splits,
                                           MetricsWriter* metrics) {
  Rng rng = Rng(cfg.seed).split(3);
  auto sink = [metrics](const rl::StepRecord& rec) {
    if (metrics) {
      metrics->write(rec.step, {{"mean_reward", rec.mean_reward},
                                {"kl_to_ref", rec.kl_to_ref},
                                {"entropy", rec.entropy},
                                {"clip_frac", rec.clip_frac}});
    }
  };
  return rl::train_rl(m, cfg.task, splits.rl_prompts, cfg.rl, rng, sink);
}

analysis::PassAtKReport eval_stage(const io::ExperimentConfig& cfg, const model::PolicyModel& m,
                                   const tasks::DatasetSplits& splits) {
  std::vector<std::vector<int>> prompts;
  prompts.reserve(splits.validation.size());
  for (const auto& seq : splits.validation) prompts.push_back(seq.prompt);
  Rng rng = Rng(cfg.seed).split(4);
  return analysis::evaluate_pass_at_k(m, cfg.task, prompts, cfg.eval.samples, cfg.eval.temperature,
                                      cfg.eval.k_list, cfg.eval.max_new_tokens, rng);
}

nlohmann::json pass_report_json(const analysis::PassAtKReport& report) {
  nlohmann::json per_prompt = nlohmann::json::array();
  for (const auto& [n, c] : report.per_prompt) per_prompt.push_back({{"n", n}, {"c", c}});
  nlohmann::json estimates;
  for (const auto& [k, v] : report.estimates) estimates[std::to_string(k)] = v;
  return nlohmann::json{{"schema_version", 1},
                        {"k_list", report.k_list},
                        {"estimates", estimates},
                        {"per_prompt", per_prompt},
                        {"temperature", report.temperature},
                        {"samples", report.samples}};
}

nlohmann::json consistency_report_json(const analysis::ConsistencyReport& report) {
  nlohmann::json topk;
  for (const auto& [k, v] : report.topk) topk[std::to_string(k)] = v;
  return nlohmann::json{{"schema_version", 1}, {"stage", report.stage},
                        {"direction", report.direction}, {"cosine", report.cosine},
                        {"l2", report.l2},               {"kl", report.kl},
                        {"topk_overlap", topk}};
}

RunManifest run_pipeline(const io::ExperimentConfig& cfg, bool overwrite) {
  const std::filesystem::path out(cfg.out_dir);
  const std::filesystem::path manifest_path = out / "run_manifest.json";
  if (std::filesystem::exists(manifest_path) && !overwrite) {
    throw std::runtime_error("run_pipeline: " + manifest_path.string() +
                             " already exists; pass --overwrite to replace it");
  }
  std::filesystem::create_directories(out);

  RunManifest manifest;
  manifest.config_snapshot = cfg.to_json();
  manifest.config_hash = cfg.config_hash();
  manifest.write(manifest_path);

  std::string current_stage = "gen-data";
  try {
    // Data.
    auto t0 = Clock::now();
    const auto splits = tasks::generate_dataset(cfg.task, cfg.data, cfg.seed);
    tasks::write_dataset(out / "data", cfg.task, cfg.data, splits);
    {
      char buf[24];
      std::snprintf(buf, sizeof(buf), "%016llx",
                    static_cast<unsigned long long>(tasks::dataset_content_hash(splits)));
      manifest.dataset_hash = buf;
    }
    manifest.stages.push_back({"gen-data", (out / "data").string(), seconds_since(t0)});

    // Base model: pretrain or reuse.
    current_stage = "pretrain-base";
    t0 = Clock::now();
    const auto base_dir = out / "checkpoints" / "base";
    if (cfg.base_checkpoint.empty()) {
      MetricsWriter metrics(out / "metrics" / "pretrain.jsonl", "pretrain", cfg.seed,
                            manifest.config_hash);
      const auto base = pretrain_base(cfg, &metrics);
      io::save_checkpoint(base_dir, *base);
    } else {
      const auto base = io::load_checkpoint(cfg.base_checkpoint);
      io::save_checkpoint(base_dir, *base);
    }
    manifest.stages.push_back({"pretrain-base", base_dir.string(), seconds_since(t0)});

    // Fine-tuning stage.
    current_stage = "train-sft";
    t0 = Clock::now();
    const auto sft_dir = out / "checkpoints" / "sft";
    {
      const auto base = io::load_checkpoint(base_dir);
      if (cfg.sft.method == "none") {
        io::save_checkpoint(sft_dir, *base);
      } else {
        MetricsWriter metrics(out / "metrics" / "sft.jsonl", "sft", cfg.seed, manifest.config_hash);
        auto outcome = train_sft_stage(cfg, *base, splits, &metrics);
        io::save_checkpoint(sft_dir, *outcome.model);
      }
    }
    manifest.stages.push_back({"train-sft", sft_dir.string(), seconds_since(t0)});

    // RL stage (skipped when the step budget is zero).
    current_stage = "train-rl";
    const bool run_rl = cfg.rl.steps > 0 || cfg.rl.epochs > 0;
    const auto rl_dir = out / "checkpoints" / "rl";
    if (run_rl) {
      t0 = Clock::now();
      auto m = io::load_checkpoint(sft_dir);
      MetricsWriter metrics(out / "metrics" / "rl.jsonl", "rl", cfg.seed, manifest.config_hash);
      train_rl_stage(cfg, *m, splits, &metrics);
      io::save_checkpoint(rl_dir, *m);
      manifest.stages.push_back({"train-rl", rl_dir.string(), seconds_since(t0)});
    }

    // Evaluation and drift reports.
    current_stage = "eval";
    t0 = Clock::now();
    {
      const auto final_model = io::load_checkpoint(run_rl ? rl_dir : sft_dir);
      const auto report = eval_stage(cfg, *final_model, splits);
      std::ofstream rf(out / "eval_report.json");
      rf << pass_report_json(report).dump(2) << "\n";

      MetricsWriter metrics(out / "metrics" / "eval.jsonl", "eval", cfg.seed, manifest.config_hash);
      nlohmann::json estimates;
      for (const auto& [k, v] : report.estimates) estimates[std::to_string(k)] = v;
      metrics.write(0, {{"pass_at_k", estimates}});

      const auto base = io::load_checkpoint(base_dir);
      const auto sft = io::load_checkpoint(sft_dir);
      const auto drift =
          analysis::consistency_report("base->sft", *base, *sft, splits.validation, cfg.eval.topk_list);
      std::ofstream df(out / "analyze_base_sft.json");
      df << consistency_report_json(drift).dump(2) << "\n";
      if (run_rl) {
        const auto rl_model = io::load_checkpoint(rl_dir);
        const auto drift2 = analysis::consistency_report("sft->rl", *sft, *rl_model,
                                                         splits.validation, cfg.eval.topk_list);
        std::ofstream df2(out / "analyze_sft_rl.json");
        df2 << consistency_report_json(drift2).dump(2) << "\n";
      }
    }
    manifest.stages.push_back({"eval", "", seconds_since(t0)});

    manifest.status = "complete";
    manifest.write(manifest_path);
  } catch (...) {
    manifest.status = "failed: " + current_stage;
    manifest.write(manifest_path);
    throw;
  }
  return manifest;
}

}  // namespace giftlab::pipeline
