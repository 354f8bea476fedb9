#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "codesearch/tokenizer.hpp"
#include "doctest.h"

using namespace codesearch;

namespace {

const std::vector<std::string>& training_corpus() {
  static const std::vector<std::string> corpus{
      "function sort array by key",
      "sort the array with a custom comparator",
      "how to sort numbers in an array",
      "array.sort((a, b) => a - b);",
      "return array.slice().sort();",
      "keys.sort(); values.sort();",
  };
  return corpus;
}

Vocabulary small_vocab(size_t size = 200, bool lowercase = false) {
  VocabTrainOptions opts;
  opts.vocab_size = size;
  opts.lowercase = lowercase;
  return train_vocab(training_corpus(), opts);
}

}  // namespace

TEST_CASE("pretokenize splits words and punctuation") {
  CHECK(pretokenize("a.sort(x);", false) ==
        std::vector<std::string>{"a", ".", "sort", "(", "x", ")", ";"});
  CHECK(pretokenize("Foo BAR", true) == std::vector<std::string>{"foo", "bar"});
  CHECK(pretokenize("Foo BAR", false) == std::vector<std::string>{"Foo", "BAR"});
  CHECK(pretokenize("  \t\n ", false).empty());
  CHECK(pretokenize("x1y2", false) == std::vector<std::string>{"x1y2"});
}

TEST_CASE("special tokens hold the first five ids") {
  const Vocabulary vocab = small_vocab();
  CHECK(vocab.token(Vocabulary::kPad) == "[PAD]");
  CHECK(vocab.token(Vocabulary::kUnk) == "[UNK]");
  CHECK(vocab.token(Vocabulary::kCls) == "[CLS]");
  CHECK(vocab.token(Vocabulary::kSep) == "[SEP]");
  CHECK(vocab.token(Vocabulary::kMask) == "[MASK]");
  CHECK(vocab.id("[MASK]") == 4);
  CHECK(vocab.id("nonexistent-token") == -1);
}

TEST_CASE("training text never encodes to [UNK]") {
  const Vocabulary vocab = small_vocab();
  for (const auto& text : training_corpus()) {
    for (int id : encode_content(text, vocab, false)) {
      CHECK(id != Vocabulary::kUnk);
    }
  }
}

TEST_CASE("characters outside the training alphabet become [UNK]") {
  const Vocabulary vocab = small_vocab();
  const auto ids = encode_content("sort \xE2\x98\x83", vocab, false);
  REQUIRE(ids.size() >= 2);
  CHECK(ids.back() == Vocabulary::kUnk);
}

TEST_CASE("vocabulary size is capped and the base alphabet survives") {
  Vocabulary tight = small_vocab(60);
  CHECK(tight.size() <= 60);
  // Word-initial and continuation pieces of the corpus stay addressable.
  for (const char* piece : {"s", "a", "t", "r", "##o", "##y"}) {
    CHECK(tight.id(piece) >= 0);
  }
  Vocabulary wide = small_vocab(300);
  CHECK(wide.size() <= 300);
  CHECK(wide.size() >= tight.size());
  // With room to merge, frequent words collapse into single tokens.
  CHECK(wide.id("sort") >= 0);
  CHECK(wide.id("array") >= 0);
}

TEST_CASE("likelihood scoring beats raw counts") {
  // "ab" appears 6 times but its pieces are common elsewhere; "xy" appears 3
  // times and x, ##y occur nowhere else. With one merge slot, likelihood
  // picks "xy": 3/(3*3) over 6/(8*8).
  const std::vector<std::string> corpus{
      "ab ab ab ab ab ab",
      "xy xy xy",
      "aa bb aa bb",
  };
  VocabTrainOptions opts;
  // Base: specials + pieces {a, ##a, ##b, b, x, ##y}, then one merge.
  opts.vocab_size = 5 + 6 + 1;
  const Vocabulary vocab = train_vocab(corpus, opts);
  CHECK(vocab.id("xy") >= 0);
  CHECK(vocab.id("ab") == -1);
}

TEST_CASE("encode produces fixed-length framed sequences") {
  const Vocabulary vocab = small_vocab();
  const TokenSequence seq = encode("sort the array", vocab, 16, true);
  REQUIRE(seq.ids.size() == 16);
  REQUIRE(seq.attention_mask.size() == 16);
  CHECK(seq.ids[0] == Vocabulary::kCls);
  const size_t n = seq.unpadded_length();
  CHECK(seq.ids[n - 1] == Vocabulary::kSep);
  for (size_t i = 0; i < 16; ++i) {
    CHECK(seq.attention_mask[i] == (i < n ? 1 : 0));
    if (i >= n) CHECK(seq.ids[i] == Vocabulary::kPad);
  }
  CHECK(seq.original_length == static_cast<int>(n - 2));
}

TEST_CASE("long content keeps its head") {
  const Vocabulary vocab = small_vocab();
  const std::string text = "sort the array with a custom comparator";
  const auto full = encode_content(text, vocab, true);
  REQUIRE(full.size() > 4);
  const TokenSequence seq = encode(text, vocab, 6, true);
  REQUIRE(seq.ids.size() == 6);
  CHECK(seq.ids[0] == Vocabulary::kCls);
  CHECK(seq.ids[5] == Vocabulary::kSep);
  for (int i = 0; i < 4; ++i) CHECK(seq.ids[i + 1] == full[static_cast<size_t>(i)]);
  CHECK(seq.original_length == static_cast<int>(full.size()));
  CHECK_THROWS_AS(encode(text, vocab, 2, true), std::invalid_argument);
}

TEST_CASE("decode inverts encode on in-vocabulary text") {
  const Vocabulary vocab = small_vocab();
  const std::string text = "sort the array with a custom comparator";
  const TokenSequence seq = encode(text, vocab, 32, true);
  CHECK(decode(seq.ids, vocab) == text);
}

TEST_CASE("vocabulary files round-trip and hash their content") {
  const Vocabulary vocab = small_vocab();
  const std::string path = "vocab_test.txt";
  save_vocabulary(vocab, path);
  const Vocabulary loaded = load_vocabulary(path);
  CHECK(loaded.tokens == vocab.tokens);
  CHECK(loaded.content_hash() == vocab.content_hash());
  std::remove(path.c_str());

  VocabTrainOptions opts;
  opts.vocab_size = 40;
  const Vocabulary other = train_vocab({"zig zag zig"}, opts);
  CHECK(other.content_hash() != vocab.content_hash());
}

TEST_CASE("load_vocabulary rejects a file without the special prefix") {
  const std::string path = "vocab_bad_test.txt";
  std::ofstream(path) << "[PAD]\n[UNK]\nwrong\n[SEP]\n[MASK]\na\n";
  CHECK_THROWS_AS(load_vocabulary(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("train_vocab refuses impossible budgets") {
  VocabTrainOptions opts;
  opts.vocab_size = 6;  // five specials + one slot cannot hold the alphabet
  CHECK_THROWS_AS(train_vocab(training_corpus(), opts), std::invalid_argument);
}
