#include "giftlab/tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "giftlab/rng.hpp"

namespace giftlab::tasks {

namespace {

constexpr const char* kSymbols = "0123456789+=()#";
constexpr int kBos = 15;
constexpr int kEos = 16;
constexpr int kPad = 17;
constexpr int kHash = 14;

constexpr int kEnumerationCap = 200000;  // above this, sample with dedupe

}  // namespace

std::string family_name(Family f) {
  switch (f) {
    case Family::ModAddition: return "mod-addition";
    case Family::DigitSort: return "digit-sort";
    case Family::ParenBalance: return "parenthesis-balance";
  }
  throw std::logic_error("unknown family");
}

Family parse_family(const std::string& name) {
  if (name == "mod-addition") return Family::ModAddition;
  if (name == "digit-sort") return Family::DigitSort;
  if (name == "parenthesis-balance") return Family::ParenBalance;
  throw std::invalid_argument("unknown task family: " + name);
}

std::string chain_style_name(ChainStyle c) {
  return c == ChainStyle::Direct ? "direct" : "with-scratchpad";
}

ChainStyle parse_chain_style(const std::string& name) {
  if (name == "direct") return ChainStyle::Direct;
  if (name == "with-scratchpad") return ChainStyle::WithScratchpad;
  throw std::invalid_argument("unknown chain style: " + name);
}

void TaskSpec::validate() const {
  if (modulus < 2 || modulus > 10) throw std::invalid_argument("TaskSpec: modulus must be in [2, 10]");
  if (operand_max < 1 || operand_max > 999) {
    throw std::invalid_argument("TaskSpec: operand_max must be in [1, 999]");
  }
  if (digits_min < 1 || digits_max < digits_min || digits_max > 12) {
    throw std::invalid_argument("TaskSpec: bad digit-sort lengths");
  }
  if (paren_min < 1 || paren_max < paren_min || paren_max > 9) {
    throw std::invalid_argument("TaskSpec: parenthesis lengths must fit single-digit depth traces");
  }
}

const model::Vocabulary& vocabulary() {
  static const model::Vocabulary voc(18, kBos, kEos, kPad);
  return voc;
}

int symbol_id(char c) {
  const char* pos = std::strchr(kSymbols, c);
  if (pos == nullptr || c == '\0') throw std::invalid_argument(std::string("unknown symbol '") + c + "'");
  return static_cast<int>(pos - kSymbols);
}

char symbol_char(int id) {
  if (id < 0 || id >= kHash + 1) throw std::invalid_argument("symbol id out of text range: " + std::to_string(id));
  return kSymbols[id];
}

model::TokenSequence encode(const std::string& prompt_text, const std::string& response_text) {
  model::TokenSequence seq;
  seq.prompt.push_back(kBos);
  for (std::size_t i = 0; i < prompt_text.size(); ++i) {
    try {
      seq.prompt.push_back(symbol_id(prompt_text[i]));
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("encode: unknown symbol at prompt position " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < response_text.size(); ++i) {
    try {
      seq.response.push_back(symbol_id(response_text[i]));
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("encode: unknown symbol at response position " + std::to_string(i));
    }
  }
  seq.response.push_back(kEos);
  return seq;
}

std::pair<std::string, std::string> decode(const model::TokenSequence& seq) {
  if (seq.prompt.empty() || seq.prompt.front() != kBos) {
    throw std::invalid_argument("decode: prompt must start with bos");
  }
  if (seq.response.empty() || seq.response.back() != kEos) {
    throw std::invalid_argument("decode: response must end with eos");
  }
  std::string prompt_text, response_text;
  for (std::size_t i = 1; i < seq.prompt.size(); ++i) prompt_text.push_back(symbol_char(seq.prompt[i]));
  for (std::size_t i = 0; i + 1 < seq.response.size(); ++i) {
    response_text.push_back(symbol_char(seq.response[i]));
  }
  return {prompt_text, response_text};
}

// --- instance construction --------------------------------------------------

namespace {

std::string paren_trace(const std::string& parens, bool* balanced_out) {
  std::string trace;
  int depth = 0;
  bool ok = true;
  for (char c : parens) {
    depth += (c == '(') ? 1 : -1;
    if (depth < 0) {
      ok = false;
      break;
    }
    trace.push_back(static_cast<char>('0' + depth));
  }
  *balanced_out = ok && depth == 0;
  return trace;
}

Instance make_instance(const TaskSpec& spec, std::uint64_t index) {
  Instance inst;
  switch (spec.family) {
    case Family::ModAddition: {
      const std::uint64_t side = static_cast<std::uint64_t>(spec.operand_max) + 1;
      const int a = static_cast<int>(index / side);
      const int b = static_cast<int>(index % side);
      const int sum = a + b;
      const int ans = sum % spec.modulus;
      inst.prompt_text = std::to_string(a) + "+" + std::to_string(b) + "=";
      inst.answer_text = std::to_string(ans);
      inst.response_text = spec.chain_style == ChainStyle::WithScratchpad
                               ? std::to_string(sum) + "#" + inst.answer_text
                               : inst.answer_text;
      break;
    }
    case Family::DigitSort: {
      // index selects a length block then the digit string within it.
      std::uint64_t rest = index;
      int len = spec.digits_min;
      for (; len <= spec.digits_max; ++len) {
        std::uint64_t block = 1;
        for (int i = 0; i < len; ++i) block *= 10;
        if (rest < block) break;
        rest -= block;
      }
      std::string digits(len, '0');
      for (int i = len - 1; i >= 0; --i) {
        digits[i] = static_cast<char>('0' + rest % 10);
        rest /= 10;
      }
      std::string sorted = digits;
      std::sort(sorted.begin(), sorted.end());
      inst.prompt_text = digits + "=";
      inst.answer_text = sorted;
      inst.response_text = spec.chain_style == ChainStyle::WithScratchpad
                               ? digits + "#" + sorted
                               : sorted;
      break;
    }
    case Family::ParenBalance: {
      std::uint64_t rest = index;
      int len = spec.paren_min;
      for (; len <= spec.paren_max; ++len) {
        const std::uint64_t block = 1ULL << len;
        if (rest < block) break;
        rest -= block;
      }
      std::string parens(len, '(');
      for (int i = len - 1; i >= 0; --i) {
        parens[i] = (rest & 1) ? ')' : '(';
        rest >>= 1;
      }
      bool balanced = false;
      const std::string trace = paren_trace(parens, &balanced);
      inst.prompt_text = parens + "=";
      inst.answer_text = balanced ? "1" : "0";
      inst.response_text = spec.chain_style == ChainStyle::WithScratchpad
                               ? trace + "#" + inst.answer_text
                               : inst.answer_text;
      break;
    }
  }
  return inst;
}

std::uint64_t instance_space_size(const TaskSpec& spec) {
  switch (spec.family) {
    case Family::ModAddition: {
      const std::uint64_t side = static_cast<std::uint64_t>(spec.operand_max) + 1;
      return side * side;
    }
    case Family::DigitSort: {
      std::uint64_t total = 0;
      for (int len = spec.digits_min; len <= spec.digits_max; ++len) {
        std::uint64_t block = 1;
        for (int i = 0; i < len; ++i) block *= 10;
        total += block;
      }
      return total;
    }
    case Family::ParenBalance: {
      std::uint64_t total = 0;
      for (int len = spec.paren_min; len <= spec.paren_max; ++len) total += 1ULL << len;
      return total;
    }
  }
  throw std::logic_error("unknown family");
}

}  // namespace

DatasetSplits generate_dataset(const TaskSpec& spec, const SplitSizes& sizes, std::uint64_t seed) {
  spec.validate();
  if (sizes.sft < 0 || sizes.rl < 0 || sizes.validation < 0) {
    throw std::invalid_argument("generate_dataset: negative split size");
  }
  const std::uint64_t total =
      static_cast<std::uint64_t>(sizes.sft) + sizes.rl + sizes.validation;
  const std::uint64_t space = instance_space_size(spec);
  if (total > space) {
    throw std::domain_error("generate_dataset: requested " + std::to_string(total) +
                            " instances but the family has only " + std::to_string(space) +
                            " distinct prompts");
  }

  Rng rng(seed);
  std::vector<Instance> chosen;
  chosen.reserve(total);
  if (space <= kEnumerationCap) {
    std::vector<std::uint64_t> indices(space);
    for (std::uint64_t i = 0; i < space; ++i) indices[i] = i;
    rng.shuffle(indices);
    for (std::uint64_t i = 0; i < total; ++i) chosen.push_back(make_instance(spec, indices[i]));
  } else {
    std::unordered_set<std::string> seen;
    std::uint64_t attempts = 0;
    const std::uint64_t max_attempts = 200 * total + 1000;
    while (chosen.size() < total) {
      if (++attempts > max_attempts) {
        throw std::domain_error("generate_dataset: sampling stalled; space too collision-heavy for " +
                                std::to_string(total) + " instances");
      }
      // Draw an index uniformly from the space via 64-bit rejection.
      const std::uint64_t limit = UINT64_MAX - UINT64_MAX % space;
      std::uint64_t x = rng.next_u64();
      while (x >= limit) x = rng.next_u64();
      const Instance inst = make_instance(spec, x % space);
      if (seen.insert(inst.prompt_text).second) chosen.push_back(inst);
    }
  }

  DatasetSplits splits;
  splits.seed = seed;
  std::size_t cursor = 0;
  for (int i = 0; i < sizes.sft; ++i, ++cursor) {
    const auto& inst = chosen[cursor];
    splits.sft.push_back(encode(inst.prompt_text, inst.response_text));
  }
  for (int i = 0; i < sizes.rl; ++i, ++cursor) {
    const auto& inst = chosen[cursor];
    auto seq = encode(inst.prompt_text, inst.response_text);
    splits.rl_prompts.push_back(seq.prompt);
    splits.rl_full.push_back(std::move(seq));
  }
  for (int i = 0; i < sizes.validation; ++i, ++cursor) {
    const auto& inst = chosen[cursor];
    splits.validation.push_back(encode(inst.prompt_text, inst.response_text));
  }
  return splits;
}

std::string ground_truth(const TaskSpec& spec, std::span<const int> prompt_tokens) {
  if (prompt_tokens.empty() || prompt_tokens.front() != kBos) {
    throw std::invalid_argument("ground_truth: prompt must start with bos");
  }
  std::string text;
  for (std::size_t i = 1; i < prompt_tokens.size(); ++i) text.push_back(symbol_char(prompt_tokens[i]));
  if (text.empty() || text.back() != '=') {
    throw std::invalid_argument("ground_truth: prompt must end with '='");
  }
  text.pop_back();

  switch (spec.family) {
    case Family::ModAddition: {
      const std::size_t plus = text.find('+');
      if (plus == std::string::npos) throw std::invalid_argument("ground_truth: missing '+'");
      const int a = std::stoi(text.substr(0, plus));
      const int b = std::stoi(text.substr(plus + 1));
      return std::to_string((a + b) % spec.modulus);
    }
    case Family::DigitSort: {
      std::string sorted = text;
      std::sort(sorted.begin(), sorted.end());
      return sorted;
    }
    case Family::ParenBalance: {
      bool balanced = false;
      paren_trace(text, &balanced);
      return balanced ? "1" : "0";
    }
  }
  throw std::logic_error("unknown family");
}

double reward(const TaskSpec& spec, std::span<const int> prompt_tokens,
              std::span<const int> response_tokens) {
  std::string truth;
  try {
    truth = ground_truth(spec, prompt_tokens);
  } catch (const std::exception&) {
    return 0.0;
  }
  // Fail closed on anything malformed: missing eos, stray special or
  // non-text tokens, empty answer.
  if (response_tokens.empty() || response_tokens.back() != kEos) return 0.0;
  std::string text;
  for (std::size_t i = 0; i + 1 < response_tokens.size(); ++i) {
    const int id = response_tokens[i];
    if (id < 0 || id > kHash) return 0.0;
    text.push_back(kSymbols[id]);
  }
  const std::size_t hash_pos = text.rfind('#');
  const std::string answer = hash_pos == std::string::npos ? text : text.substr(hash_pos + 1);
  return answer == truth ? 1.0 : 0.0;
}

// --- serialization ----------------------------------------------------------

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

nlohmann::json line_for(const std::string& split, const model::TokenSequence& seq,
                        const TaskSpec& spec, int seed_index) {
  const auto [prompt_text, response_text] = decode(seq);
  std::string answer = response_text;
  const std::size_t hash_pos = answer.rfind('#');
  if (hash_pos != std::string::npos) answer = answer.substr(hash_pos + 1);
  return nlohmann::json{{"split", split},
                        {"prompt_tokens", seq.prompt},
                        {"response_tokens", seq.response},
                        {"answer_text", answer},
                        {"family", family_name(spec.family)},
                        {"seed_index", seed_index}};
}

}  // namespace

std::uint64_t dataset_content_hash(const DatasetSplits& splits) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto fold_seq = [&h](const model::TokenSequence& seq) {
    for (int t : seq.prompt) h = fnv1a(h, &t, sizeof(t));
    for (int t : seq.response) h = fnv1a(h, &t, sizeof(t));
  };
  for (const auto& s : splits.sft) fold_seq(s);
  for (const auto& s : splits.rl_full) fold_seq(s);
  for (const auto& s : splits.validation) fold_seq(s);
  h = fnv1a(h, &splits.seed, sizeof(splits.seed));
  return h;
}

void write_dataset(const std::filesystem::path& dir, const TaskSpec& spec, const SplitSizes& sizes,
                   const DatasetSplits& splits) {
  std::filesystem::create_directories(dir);
  std::ofstream lines(dir / "dataset.jsonl");
  if (!lines) throw std::runtime_error("write_dataset: cannot open " + (dir / "dataset.jsonl").string());
  int idx = 0;
  for (const auto& s : splits.sft) lines << line_for("sft", s, spec, idx++).dump() << "\n";
  for (const auto& s : splits.rl_full) lines << line_for("rl", s, spec, idx++).dump() << "\n";
  for (const auto& s : splits.validation) lines << line_for("validation", s, spec, idx++).dump() << "\n";
  lines.close();

  char hash_hex[32];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(dataset_content_hash(splits)));
  nlohmann::json manifest{
      {"schema_version", 1},
      {"family", family_name(spec.family)},
      {"chain_style", chain_style_name(spec.chain_style)},
      {"modulus", spec.modulus},
      {"operand_max", spec.operand_max},
      {"digits_min", spec.digits_min},
      {"digits_max", spec.digits_max},
      {"paren_min", spec.paren_min},
      {"paren_max", spec.paren_max},
      {"sizes", {{"sft", sizes.sft}, {"rl", sizes.rl}, {"validation", sizes.validation}}},
      {"seed", splits.seed},
      {"content_hash", std::string(hash_hex)}};
  std::ofstream mf(dir / "dataset_manifest.json");
  mf << manifest.dump(2) << "\n";
}

DatasetSplits load_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "dataset_manifest.json");
  if (!mf) throw std::runtime_error("load_dataset: missing manifest in " + dir.string());
  nlohmann::json manifest;
  mf >> manifest;
  if (manifest.at("schema_version").get<int>() != 1) {
    throw std::runtime_error("load_dataset: unsupported dataset schema version");
  }

  std::ifstream lines(dir / "dataset.jsonl");
  if (!lines) throw std::runtime_error("load_dataset: missing dataset.jsonl in " + dir.string());
  DatasetSplits splits;
  splits.seed = manifest.at("seed").get<std::uint64_t>();
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    model::TokenSequence seq;
    seq.prompt = j.at("prompt_tokens").get<std::vector<int>>();
    seq.response = j.at("response_tokens").get<std::vector<int>>();
    const std::string split = j.at("split").get<std::string>();
    if (split == "sft") {
      splits.sft.push_back(std::move(seq));
    } else if (split == "rl") {
      splits.rl_prompts.push_back(seq.prompt);
      splits.rl_full.push_back(std::move(seq));
    } else if (split == "validation") {
      splits.validation.push_back(std::move(seq));
    } else {
      throw std::runtime_error("load_dataset: unknown split '" + split + "'");
    }
  }

  char hash_hex[32];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(dataset_content_hash(splits)));
  if (manifest.at("content_hash").get<std::string>() != hash_hex) {
    throw std::runtime_error("load_dataset: content hash mismatch; dataset corrupted or edited");
  }
  return splits;
}

std::vector<model::TokenSequence> pretrain_corpus(int count, std::uint64_t seed) {
  if (count < 3) throw std::invalid_argument("pretrain_corpus: count must be >= 3");
  std::vector<model::TokenSequence> corpus;
  corpus.reserve(count);

  const int per_family = count / 3;
  Rng rng(seed);
  int emitted = 0;
  for (int f = 0; f < 3; ++f) {
    TaskSpec spec;
    spec.family = static_cast<Family>(f);
    const int want = (f == 2) ? count - emitted : per_family;
    const std::uint64_t space = instance_space_size(spec);
    Rng fam_rng = rng.split(f);
    for (int i = 0; i < want; ++i) {
      // Both answer formats appear, so the base carries priors for direct
      // answers as well as scratchpad traces.
      spec.chain_style = (i % 2 == 0) ? ChainStyle::Direct : ChainStyle::WithScratchpad;
      const std::uint64_t limit = UINT64_MAX - UINT64_MAX % space;
      std::uint64_t x = fam_rng.next_u64();
      while (x >= limit) x = fam_rng.next_u64();
      const Instance inst = make_instance(spec, x % space);
      corpus.push_back(encode(inst.prompt_text, inst.response_text));
      emitted++;
    }
  }
  return corpus;
}

}  // namespace giftlab::tasks
