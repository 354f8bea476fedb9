#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace codesearch {

/// Subword vocabulary. Ids 0..4 are pinned to the special tokens below; the
/// remaining entries are whole words and "##"-prefixed continuations.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kSpecialCount = 5;

  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  size_t size() const { return tokens.size(); }
  /// Id of token, or -1 when absent.
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  /// FNV-1a over the canonical serialized form; stored in checkpoints so a
  /// model can refuse a mismatched vocabulary.
  uint64_t content_hash() const;
};

/// Splits text into words: maximal alphanumeric runs plus single punctuation
/// characters. Bytes >= 0x80 are treated as letters; whitespace separates.
std::vector<std::string> pretokenize(const std::string& text, bool lowercase);

struct VocabTrainOptions {
  size_t vocab_size = 30522;
  bool lowercase = false;
  /// Pairs must occur at least this often to be merged.
  int min_pair_count = 2;
};

/// Trains a WordPiece vocabulary by likelihood-scored pair merging:
/// score(a,b) = count(ab) / (count(a) * count(b)). The single-character base
/// alphabet of the corpus is always retained, so encoding any training text
/// never produces [UNK].
Vocabulary train_vocab(const std::vector<std::string>& corpus,
                       const VocabTrainOptions& options);

/// A fixed-length model input.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<uint8_t> attention_mask;  // 1 = real token, 0 = padding
  int original_length = 0;              // content subwords before truncation

  size_t unpadded_length() const;
};

/// [CLS] content... [SEP] then padding to max_len. Content longer than
/// max_len - 2 subwords keeps its head. Unknown words become [UNK].
/// Queries are encoded with lowercase=true, code with lowercase=false.
TokenSequence encode(const std::string& text, const Vocabulary& vocab,
                     size_t max_len, bool lowercase);

/// Content subword ids only: no specials, no truncation, no padding.
/// Greedy longest-match per word; a word with an unsegmentable remainder
/// becomes a single [UNK].
std::vector<int> encode_content(const std::string& text, const Vocabulary& vocab,
                                bool lowercase);

/// Inverse of encode up to truncation/unknowns: drops specials and padding,
/// fuses "##" continuations, joins words with single spaces.
std::string decode(const std::vector<int>& ids, const Vocabulary& vocab);

void save_vocabulary(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocabulary(const std::string& path);

}  // namespace codesearch
