#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "giftlab/rng.hpp"
#include "giftlab/tasks.hpp"

using namespace giftlab;
using namespace giftlab::tasks;

TEST_CASE("symbol table and encode/decode") {
  const auto& voc = vocabulary();
  CHECK(voc.size == 18);
  CHECK(symbol_id('0') == 0);
  CHECK(symbol_id('+') == 10);
  CHECK(symbol_char(11) == '=');
  CHECK_THROWS_AS(symbol_id('x'), std::invalid_argument);

  // "3+4=7": prompt tokens for "3+4=", response tokens for "7" + eos.
  const auto seq = encode("3+4=", "7");
  CHECK(seq.prompt == std::vector<int>{voc.bos, 3, 10, 4, 11});
  CHECK(seq.response == std::vector<int>{7, voc.eos});

  const auto [p, r] = decode(seq);
  CHECK(p == "3+4=");
  CHECK(r == "7");

  // Empty response encodes to [eos].
  CHECK(encode("1=", "").response == std::vector<int>{voc.eos});

  CHECK_THROWS_WITH_AS(encode("3*4=", "7"), doctest::Contains("position 1"),
                       std::invalid_argument);
}

TEST_CASE("encode/decode round trip over random instances") {
  Rng rng(1001);
  TaskSpec specs[3];
  specs[0].family = Family::ModAddition;
  specs[1].family = Family::DigitSort;
  specs[2].family = Family::ParenBalance;
  for (auto& s : specs) s.chain_style = ChainStyle::WithScratchpad;

  for (int trial = 0; trial < 1000; ++trial) {
    const auto& spec = specs[trial % 3];
    SplitSizes sizes{1, 0, 0};
    const auto data = generate_dataset(spec, sizes, rng.next_u64());
    const auto [p, r] = decode(data.sft[0]);
    const auto again = encode(p, r);
    CHECK(again.prompt == data.sft[0].prompt);
    CHECK(again.response == data.sft[0].response);
  }
}

TEST_CASE("mod-addition dataset: disjoint, verified, deterministic") {
  TaskSpec spec;  // defaults: mod-10, operands to 99
  SplitSizes sizes{100, 100, 20};
  const auto a = generate_dataset(spec, sizes, 7);
  const auto b = generate_dataset(spec, sizes, 7);
  CHECK(dataset_content_hash(a) == dataset_content_hash(b));

  std::set<std::vector<int>> prompts;
  auto collect = [&prompts](const std::vector<model::TokenSequence>& seqs) {
    for (const auto& s : seqs) prompts.insert(s.prompt);
  };
  collect(a.sft);
  collect(a.rl_full);
  collect(a.validation);
  CHECK(prompts.size() == 220);  // all distinct across splits

  // Every oracle demonstration earns reward 1.
  auto verify = [&spec](const std::vector<model::TokenSequence>& seqs) {
    for (const auto& s : seqs) CHECK(reward(spec, s.prompt, s.response) == 1.0);
  };
  verify(a.sft);
  verify(a.rl_full);
  verify(a.validation);

  const auto c = generate_dataset(spec, sizes, 8);
  CHECK(dataset_content_hash(a) != dataset_content_hash(c));
}

TEST_CASE("all families produce verified demonstrations in both chain styles") {
  for (const Family family : {Family::ModAddition, Family::DigitSort, Family::ParenBalance}) {
    for (const ChainStyle style : {ChainStyle::Direct, ChainStyle::WithScratchpad}) {
      TaskSpec spec;
      spec.family = family;
      spec.chain_style = style;
      const auto data = generate_dataset(spec, {40, 0, 10}, 99);
      for (const auto& s : data.sft) CHECK(reward(spec, s.prompt, s.response) == 1.0);
      for (const auto& s : data.validation) CHECK(reward(spec, s.prompt, s.response) == 1.0);
    }
  }
}

TEST_CASE("infeasible sizes are refused with the space size") {
  TaskSpec spec;
  spec.family = Family::ModAddition;
  spec.operand_max = 13;  // 196 instances
  CHECK_THROWS_WITH_AS(generate_dataset(spec, {10000, 0, 0}, 1), doctest::Contains("196"),
                       std::domain_error);
}

TEST_CASE("reward fails closed") {
  TaskSpec spec;  // mod-10 addition
  const auto seq = encode("3+4=", "7");
  CHECK(reward(spec, seq.prompt, seq.response) == 1.0);

  const auto wrong = encode("3+4=", "6");
  CHECK(reward(spec, wrong.prompt, wrong.response) == 0.0);

  // Truncated response (no eos).
  std::vector<int> truncated{7};
  CHECK(reward(spec, seq.prompt, truncated) == 0.0);

  // Special tokens inside the answer segment.
  std::vector<int> garbled{vocabulary().bos, vocabulary().eos};
  CHECK(reward(spec, seq.prompt, garbled) == 0.0);

  // Empty response.
  CHECK(reward(spec, seq.prompt, std::vector<int>{}) == 0.0);

  // Scratchpad answers match on the segment after the last '#'.
  TaskSpec pad = spec;
  pad.chain_style = ChainStyle::WithScratchpad;
  const auto padded = encode("3+4=", "07#7");
  CHECK(reward(pad, padded.prompt, padded.response) == 1.0);
}

TEST_CASE("parenthesis traces") {
  TaskSpec spec;
  spec.family = Family::ParenBalance;
  spec.chain_style = ChainStyle::WithScratchpad;
  // Find "(())" and "))((" style instances via ground truth.
  const auto balanced = encode("(())=", "1210#1");
  CHECK(reward(spec, balanced.prompt, balanced.response) == 1.0);
  CHECK(ground_truth(spec, balanced.prompt) == "1");

  const auto broken = encode(")(=", "");
  CHECK(ground_truth(spec, broken.prompt) == "0");
}

TEST_CASE("dataset write/load round trip with hash validation") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "giftlab_test_dataset";
  fs::remove_all(dir);

  TaskSpec spec;
  spec.family = Family::DigitSort;
  SplitSizes sizes{30, 20, 10};
  const auto data = generate_dataset(spec, sizes, 404);
  write_dataset(dir, spec, sizes, data);

  const auto loaded = load_dataset(dir);
  CHECK(loaded.sft.size() == 30);
  CHECK(loaded.rl_prompts.size() == 20);
  CHECK(loaded.validation.size() == 10);
  CHECK(dataset_content_hash(loaded) == dataset_content_hash(data));
  CHECK(loaded.seed == 404);

  // Corrupt one line: load must refuse.
  {
    std::ifstream in(dir / "dataset.jsonl");
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const auto pos = all.find("\"response_tokens\":[");
    REQUIRE(pos != std::string::npos);
    all[pos + 19] = all[pos + 19] == '1' ? '2' : '1';
    std::ofstream out(dir / "dataset.jsonl");
    out << all;
  }
  CHECK_THROWS_AS(load_dataset(dir), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("pretrain corpus is mixed and deterministic") {
  const auto a = pretrain_corpus(90, 5);
  const auto b = pretrain_corpus(90, 5);
  REQUIRE(a.size() == 90);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].prompt == b[i].prompt);
    CHECK(a[i].response == b[i].response);
  }
  // All three families appear: look for '+', a sort prompt (digits only),
  // and a parenthesis.
  bool has_plus = false, has_paren = false;
  for (const auto& seq : a) {
    const auto [p, r] = decode(seq);
    has_plus |= p.find('+') != std::string::npos;
    has_paren |= p.find('(') != std::string::npos || p.find(')') != std::string::npos;
  }
  CHECK(has_plus);
  CHECK(has_paren);
}
