#pragma once

/**
 * Synthetic verifiable tasks with deterministic splits.
 *
 * Three families over one fixed symbol table: modular addition, digit
 * sorting, and parenthesis balancing. Every instance has a unique answer
 * recomputable from the prompt alone, so the binary reward needs no stored
 * labels. Generation uses integer RNG only; identical (spec, sizes, seed)
 * regenerate byte-identical datasets on any platform.
 */

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "giftlab/model.hpp"

namespace giftlab::tasks {

enum class Family { ModAddition, DigitSort, ParenBalance };
enum class ChainStyle { Direct, WithScratchpad };

std::string family_name(Family f);
Family parse_family(const std::string& name);
std::string chain_style_name(ChainStyle c);
ChainStyle parse_chain_style(const std::string& name);

struct TaskSpec {
  Family family = Family::ModAddition;
  ChainStyle chain_style = ChainStyle::Direct;
  int modulus = 10;      // mod-addition
  int operand_max = 99;  // mod-addition operands in [0, operand_max]
  int digits_min = 4;    // digit-sort string lengths
  int digits_max = 6;
  int paren_min = 4;     // parenthesis string lengths
  int paren_max = 8;

  void validate() const;
};

// Shared symbol table: '0'-'9' then '+', '=', '(', ')', '#', bos, eos, pad.
const model::Vocabulary& vocabulary();
int symbol_id(char c);
char symbol_char(int id);

struct Instance {
  std::string prompt_text;
  std::string response_text;  // scratchpad '#' answer, or just the answer
  std::string answer_text;
};

struct SplitSizes {
  int sft = 2000;
  int rl = 2000;
  int validation = 200;
};

struct DatasetSplits {
  std::vector<model::TokenSequence> sft;
  std::vector<std::vector<int>> rl_prompts;
  std::vector<model::TokenSequence> rl_full;  // oracle responses for the rl prompts
  std::vector<model::TokenSequence> validation;
  std::uint64_t seed = 0;
};

// [bos] + prompt symbols; response symbols + [eos]. Unknown characters are
// rejected with their position.
model::TokenSequence encode(const std::string& prompt_text, const std::string& response_text);

// Inverse of encode; strips bos/eos.
std::pair<std::string, std::string> decode(const model::TokenSequence& seq);

DatasetSplits generate_dataset(const TaskSpec& spec, const SplitSizes& sizes, std::uint64_t seed);

// The unique answer implied by a prompt.
std::string ground_truth(const TaskSpec& spec, std::span<const int> prompt_tokens);

// Exact match of the decoded answer segment (after the last '#') against
// the ground truth. Malformed or unterminated responses score 0.
double reward(const TaskSpec& spec, std::span<const int> prompt_tokens,
              std::span<const int> response_tokens);

std::uint64_t dataset_content_hash(const DatasetSplits& splits);

void write_dataset(const std::filesystem::path& dir, const TaskSpec& spec, const SplitSizes& sizes,
                   const DatasetSplits& splits);
DatasetSplits load_dataset(const std::filesystem::path& dir);

// Mixed corpus across all families for base-model pretraining.
std::vector<model::TokenSequence> pretrain_corpus(int count, std::uint64_t seed);

}  // namespace giftlab::tasks
