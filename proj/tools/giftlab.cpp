// giftlab: desk-scale post-training experiments on synthetic verifiable
// tasks. See README.md for the subcommand tour.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "giftlab/analysis.hpp"
#include "giftlab/checkpoint.hpp"
#include "giftlab/config.hpp"
#include "giftlab/oracle.hpp"
#include "giftlab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace giftlab;

namespace {

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  bool overwrite = false;
};

io::ExperimentConfig resolve_config(const GlobalArgs& g) {
  auto overrides = g.overrides;
  if (g.seed_set) overrides.push_back("seed=" + std::to_string(g.seed));
  if (!g.out_dir.empty()) overrides.push_back("out_dir=" + g.out_dir);
  return io::load_config(g.config_path, overrides);
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    out.push_back(std::stod(csv.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  for (double v : parse_doubles(csv)) out.push_back(static_cast<std::uint64_t>(v));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"giftlab: soft-target fine-tuning, KL-regularized RL, and exact Gibbs verification"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may appear after the subcommand

  GlobalArgs g;
  app.add_option("--config", g.config_path, "JSON config file (defaults apply when omitted)");
  app.add_option("--set", g.overrides, "override config fields, e.g. --set sft.beta=10")
      ->take_all();
  app.add_option("--seed", g.seed, "override the config seed")->each([&g](const std::string&) {
    g.seed_set = true;
  });
  app.add_option("--out", g.out_dir, "override the output directory");
  app.add_flag("--overwrite", g.overwrite, "allow reusing an existing output directory");

  auto* cmd_gen = app.add_subcommand("gen-data", "generate and serialize the dataset splits");
  auto* cmd_pretrain = app.add_subcommand("pretrain-base", "pretrain the base model on the mixed corpus");

  std::string sft_method;
  auto* cmd_sft = app.add_subcommand("train-sft", "fine-tune from the base checkpoint");
  cmd_sft->add_option("--method", sft_method, "sft|gift|entropy|label-smoothing|kd");

  std::string rl_init;
  auto* cmd_rl = app.add_subcommand("train-rl", "run GRPO from a fine-tuned checkpoint");
  cmd_rl->add_option("--init", rl_init, "initial checkpoint (default <out>/checkpoints/sft)");

  std::string eval_ckpt;
  auto* cmd_eval = app.add_subcommand("eval", "pass@k and accuracy on the validation split");
  cmd_eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate (default rl, then sft)");

  std::string an_from, an_to, an_stage = "base->sft";
  auto* cmd_analyze = app.add_subcommand("analyze", "drift report between two checkpoints");
  cmd_analyze->add_option("--from", an_from, "earlier checkpoint")->required();
  cmd_analyze->add_option("--to", an_to, "later checkpoint")->required();
  cmd_analyze->add_option("--stage", an_stage, "label recorded in the report");

  std::string oracle_out;
  auto* cmd_oracle = app.add_subcommand("oracle", "run the exact Gibbs verification suite");
  cmd_oracle->add_option("--report", oracle_out, "write the JSON lines here as well as stdout");

  std::string sweep_betas = "1,5,10,20,50";
  std::string sweep_seeds = "1,2,3";
  auto* cmd_sweep = app.add_subcommand("sweep-beta", "GIFT pipeline across a beta grid");
  cmd_sweep->add_option("--betas", sweep_betas, "comma-separated beta values");
  cmd_sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds");

  auto* cmd_run = app.add_subcommand("run", "full pipeline: data, base, sft, rl, eval");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gen->parsed()) {
      const auto cfg = resolve_config(g);
      const auto splits = tasks::generate_dataset(cfg.task, cfg.data, cfg.seed);
      tasks::write_dataset(fs::path(cfg.out_dir) / "data", cfg.task, cfg.data, splits);
      std::printf("wrote %zu sft / %zu rl / %zu validation instances to %s/data\n",
                  splits.sft.size(), splits.rl_prompts.size(), splits.validation.size(),
                  cfg.out_dir.c_str());
      return 0;
    }

    if (cmd_pretrain->parsed()) {
      const auto cfg = resolve_config(g);
      pipeline::MetricsWriter metrics(fs::path(cfg.out_dir) / "metrics" / "pretrain.jsonl",
                                      "pretrain", cfg.seed, cfg.config_hash());
      const auto base = pipeline::pretrain_base(cfg, &metrics);
      io::save_checkpoint(fs::path(cfg.out_dir) / "checkpoints" / "base", *base);
      std::printf("base checkpoint at %s/checkpoints/base (%d parameters)\n", cfg.out_dir.c_str(),
                  base->param_count());
      return 0;
    }

    if (cmd_sft->parsed()) {
      auto args = g;
      if (!sft_method.empty()) args.overrides.push_back("sft.method=" + sft_method);
      const auto cfg = resolve_config(args);
      const auto splits = tasks::generate_dataset(cfg.task, cfg.data, cfg.seed);
      const auto base_dir = cfg.base_checkpoint.empty()
                                ? (fs::path(cfg.out_dir) / "checkpoints" / "base").string()
                                : cfg.base_checkpoint;
      const auto base = io::load_checkpoint(base_dir);
      pipeline::MetricsWriter metrics(fs::path(cfg.out_dir) / "metrics" / "sft.jsonl", "sft",
                                      cfg.seed, cfg.config_hash());
      auto outcome = pipeline::train_sft_stage(cfg, *base, splits, &metrics);
      io::save_checkpoint(fs::path(cfg.out_dir) / "checkpoints" / "sft", *outcome.model);
      std::printf("method %s: selected epoch %d, checkpoint at %s/checkpoints/sft\n",
                  cfg.sft.method.c_str(), outcome.selected_epoch, cfg.out_dir.c_str());
      return 0;
    }

    if (cmd_rl->parsed()) {
      const auto cfg = resolve_config(g);
      const auto splits = tasks::generate_dataset(cfg.task, cfg.data, cfg.seed);
      const auto init =
          rl_init.empty() ? (fs::path(cfg.out_dir) / "checkpoints" / "sft").string() : rl_init;
      auto m = io::load_checkpoint(init);
      pipeline::MetricsWriter metrics(fs::path(cfg.out_dir) / "metrics" / "rl.jsonl", "rl",
                                      cfg.seed, cfg.config_hash());
      const auto records = pipeline::train_rl_stage(cfg, *m, splits, &metrics);
      io::save_checkpoint(fs::path(cfg.out_dir) / "checkpoints" / "rl", *m);
      std::printf("rl: %zu steps, final mean reward %.4f, checkpoint at %s/checkpoints/rl\n",
                  records.size(), records.empty() ? 0.0 : records.back().mean_reward,
                  cfg.out_dir.c_str());
      return 0;
    }

    if (cmd_eval->parsed()) {
      const auto cfg = resolve_config(g);
      std::string ckpt = eval_ckpt;
      if (ckpt.empty()) {
        const auto rl_dir = fs::path(cfg.out_dir) / "checkpoints" / "rl";
        const auto sft_dir = fs::path(cfg.out_dir) / "checkpoints" / "sft";
        ckpt = fs::exists(rl_dir / "manifest.json") ? rl_dir.string() : sft_dir.string();
      }
      const auto m = io::load_checkpoint(ckpt);
      const auto splits = tasks::generate_dataset(cfg.task, cfg.data, cfg.seed);
      const auto report = pipeline::eval_stage(cfg, *m, splits);
      const auto j = pipeline::pass_report_json(report);
      std::ofstream rf(fs::path(cfg.out_dir) / "eval_report.json");
      rf << j.dump(2) << "\n";
      std::printf("%s\n", j.at("estimates").dump().c_str());
      return 0;
    }

    if (cmd_analyze->parsed()) {
      const auto cfg = resolve_config(g);
      const auto earlier = io::load_checkpoint(an_from);
      const auto later = io::load_checkpoint(an_to);
      const auto splits = tasks::generate_dataset(cfg.task, cfg.data, cfg.seed);
      const auto report =
          analysis::consistency_report(an_stage, *earlier, *later, splits.validation, cfg.eval.topk_list);
      std::printf("%s\n", pipeline::consistency_report_json(report).dump(2).c_str());
      return 0;
    }

    if (cmd_oracle->parsed()) {
      const auto cfg = resolve_config(g);
      Rng rng(cfg.seed);
      const auto lines = oracle::run_oracle_suite(rng);
      std::ofstream rf;
      if (!oracle_out.empty()) rf.open(oracle_out);
      bool all_pass = true;
      for (const auto& line : lines) {
        const nlohmann::json j{{"check", line.check}, {"max_error", line.max_error}, {"pass", line.pass}};
        std::printf("%s\n", j.dump().c_str());
        if (rf.is_open()) rf << j.dump() << "\n";
        all_pass &= line.pass;
      }
      return all_pass ? 0 : 1;
    }

    if (cmd_sweep->parsed()) {
      const auto cfg = resolve_config(g);
      const auto betas = parse_doubles(sweep_betas);
      const auto seeds = parse_seeds(sweep_seeds);
      const auto table = analysis::sweep_beta(cfg, betas, seeds);
      fs::create_directories(cfg.out_dir);
      const auto csv = analysis::sweep_csv(table);
      std::ofstream out(fs::path(cfg.out_dir) / "sweep.csv");
      out << csv;
      std::printf("%s", csv.c_str());
      for (const auto& cell : table.cells) {
        if (cell.status != "ok") return 1;
      }
      return 0;
    }

    if (cmd_run->parsed()) {
      const auto cfg = resolve_config(g);
      const auto manifest = pipeline::run_pipeline(cfg, g.overwrite);
      std::printf("pipeline %s; manifest at %s/run_manifest.json\n", manifest.status.c_str(),
                  cfg.out_dir.c_str());
      return manifest.status == "complete" ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
