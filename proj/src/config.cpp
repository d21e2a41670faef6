#include "giftlab/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace giftlab::io {

namespace {

const std::set<std::string> kMethods{"none", "sft", "gift", "entropy", "label-smoothing", "kd"};

template <class T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::uint64_t fnv1a_str(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  // Method-specific knobs appear only under their method, matching the
  // validation rule in load_config.
  nlohmann::json sft_json{{"method", sft.method},   {"epochs", sft.epochs},
                          {"lr", sft.lr},           {"batch", sft.batch},
                          {"select_epoch", sft.select_epoch},
                          {"mask_prompt", sft.mask_prompt},
                          {"token_mean", sft.token_mean},
                          {"train_on", sft.train_on}};
  if (sft.method == "gift") sft_json["beta"] = sft.beta;
  if (sft.method == "label-smoothing") sft_json["epsilon"] = sft.epsilon;
  if (sft.method == "entropy") sft_json["lambda_h"] = sft.lambda_h;
  if (sft.method == "kd") sft_json["alpha"] = sft.alpha;

  return nlohmann::json{
      {"seed", seed},
      {"out_dir", out_dir},
      {"task",
       {{"family", tasks::family_name(task.family)},
        {"chain_style", tasks::chain_style_name(task.chain_style)},
        {"modulus", task.modulus},
        {"operand_max", task.operand_max},
        {"digits_min", task.digits_min},
        {"digits_max", task.digits_max},
        {"paren_min", task.paren_min},
        {"paren_max", task.paren_max}}},
      {"data", {{"sft", data.sft}, {"rl", data.rl}, {"validation", data.validation}}},
      {"model",
       {{"width", arch.width}, {"heads", arch.heads}, {"layers", arch.layers}, {"context", arch.context}}},
      {"pretrain",
       {{"sequences", pretrain.sequences},
        {"epochs", pretrain.epochs},
        {"lr", pretrain.lr},
        {"batch", pretrain.batch},
        {"corpus_seed_offset", pretrain.corpus_seed_offset}}},
      {"sft", sft_json},
      {"rl",
       {{"group_size", rl.group_size},
        {"clip_ratio", rl.clip_ratio},
        {"learning_rate", rl.learning_rate},
        {"rollout_temperature", rl.rollout_temperature},
        {"kl_coeff", rl.kl_coeff},
        {"epochs", rl.epochs},
        {"steps", rl.steps},
        {"batch_prompts", rl.batch_prompts},
        {"max_new_tokens", rl.max_new_tokens}}},
      {"eval",
       {{"temperature", eval.temperature},
        {"samples", eval.samples},
        {"k_list", eval.k_list},
        {"topk_list", eval.topk_list},
        {"max_new_tokens", eval.max_new_tokens}}},
      {"base_checkpoint", base_checkpoint}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  if (!j.contains("seed")) throw std::invalid_argument("config: seed is mandatory");
  cfg.seed = j.at("seed").get<std::uint64_t>();
  get_if_present(j, "out_dir", cfg.out_dir);
  get_if_present(j, "base_checkpoint", cfg.base_checkpoint);

  if (j.contains("task")) {
    const auto& t = j.at("task");
    if (t.contains("family")) cfg.task.family = tasks::parse_family(t.at("family").get<std::string>());
    if (t.contains("chain_style")) {
      cfg.task.chain_style = tasks::parse_chain_style(t.at("chain_style").get<std::string>());
    }
    get_if_present(t, "modulus", cfg.task.modulus);
    get_if_present(t, "operand_max", cfg.task.operand_max);
    get_if_present(t, "digits_min", cfg.task.digits_min);
    get_if_present(t, "digits_max", cfg.task.digits_max);
    get_if_present(t, "paren_min", cfg.task.paren_min);
    get_if_present(t, "paren_max", cfg.task.paren_max);
    cfg.task.validate();
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    get_if_present(d, "sft", cfg.data.sft);
    get_if_present(d, "rl", cfg.data.rl);
    get_if_present(d, "validation", cfg.data.validation);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    get_if_present(m, "width", cfg.arch.width);
    get_if_present(m, "heads", cfg.arch.heads);
    get_if_present(m, "layers", cfg.arch.layers);
    get_if_present(m, "context", cfg.arch.context);
  }
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    get_if_present(p, "sequences", cfg.pretrain.sequences);
    get_if_present(p, "epochs", cfg.pretrain.epochs);
    get_if_present(p, "lr", cfg.pretrain.lr);
    get_if_present(p, "batch", cfg.pretrain.batch);
    get_if_present(p, "corpus_seed_offset", cfg.pretrain.corpus_seed_offset);
  }
  if (j.contains("sft")) {
    const auto& s = j.at("sft");
    get_if_present(s, "method", cfg.sft.method);
    get_if_present(s, "beta", cfg.sft.beta);
    get_if_present(s, "epsilon", cfg.sft.epsilon);
    get_if_present(s, "lambda_h", cfg.sft.lambda_h);
    get_if_present(s, "alpha", cfg.sft.alpha);
    get_if_present(s, "epochs", cfg.sft.epochs);
    get_if_present(s, "lr", cfg.sft.lr);
    get_if_present(s, "batch", cfg.sft.batch);
    get_if_present(s, "select_epoch", cfg.sft.select_epoch);
    get_if_present(s, "mask_prompt", cfg.sft.mask_prompt);
    get_if_present(s, "token_mean", cfg.sft.token_mean);
    get_if_present(s, "train_on", cfg.sft.train_on);
  }
  if (j.contains("rl")) {
    const auto& r = j.at("rl");
    get_if_present(r, "group_size", cfg.rl.group_size);
    get_if_present(r, "clip_ratio", cfg.rl.clip_ratio);
    get_if_present(r, "learning_rate", cfg.rl.learning_rate);
    get_if_present(r, "rollout_temperature", cfg.rl.rollout_temperature);
    get_if_present(r, "kl_coeff", cfg.rl.kl_coeff);
    get_if_present(r, "epochs", cfg.rl.epochs);
    get_if_present(r, "steps", cfg.rl.steps);
    get_if_present(r, "batch_prompts", cfg.rl.batch_prompts);
    get_if_present(r, "max_new_tokens", cfg.rl.max_new_tokens);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    get_if_present(e, "temperature", cfg.eval.temperature);
    get_if_present(e, "samples", cfg.eval.samples);
    get_if_present(e, "k_list", cfg.eval.k_list);
    get_if_present(e, "topk_list", cfg.eval.topk_list);
    get_if_present(e, "max_new_tokens", cfg.eval.max_new_tokens);
  }

  if (!kMethods.count(cfg.sft.method)) {
    throw std::invalid_argument("config: unknown sft method '" + cfg.sft.method + "'");
  }
  if (cfg.sft.train_on != "sft" && cfg.sft.train_on != "sft+rl") {
    throw std::invalid_argument("config: sft.train_on must be 'sft' or 'sft+rl'");
  }
  return cfg;
}

std::string ExperimentConfig::config_hash() const {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a_str(to_json().dump())));
  return buf;
}

void apply_override(nlohmann::json& j, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override must look like key.path=value: " + spec);
  }
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);

  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw std::invalid_argument("override has an empty path segment: " + spec);
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json j;
  if (path.empty()) {
    j = nlohmann::json{{"seed", ExperimentConfig{}.seed}};
  } else {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    in >> j;
    if (!j.contains("seed")) j["seed"] = ExperimentConfig{}.seed;
  }

  // Method-specific fields may appear only for the method they belong to.
  const std::string method =
      j.contains("sft") && j.at("sft").contains("method") ? j.at("sft").at("method").get<std::string>()
                                                          : ExperimentConfig{}.sft.method;
  nlohmann::json merged = j;
  for (const auto& o : overrides) apply_override(merged, o);
  const std::string merged_method = merged.contains("sft") && merged.at("sft").contains("method")
                                        ? merged.at("sft").at("method").get<std::string>()
                                        : method;
  if (merged.contains("sft")) {
    const auto& s = merged.at("sft");
    const std::vector<std::pair<std::string, std::string>> owners{
        {"beta", "gift"}, {"epsilon", "label-smoothing"}, {"lambda_h", "entropy"}, {"alpha", "kd"}};
    for (const auto& [key, owner] : owners) {
      if (s.contains(key) && merged_method != owner) {
        throw std::invalid_argument("config: sft." + key + " is only valid with method '" + owner +
                                    "' (method is '" + merged_method + "')");
      }
    }
  }
  return ExperimentConfig::from_json(merged);
}

}  // namespace giftlab::io
