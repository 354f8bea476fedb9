#include "codesearch/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "codesearch/util.hpp"

namespace codesearch {

namespace {

const char* const kSpecialNames[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_word_char(unsigned char c) {
  // Bytes >= 0x80 count as letters so multi-byte text stays in one word.
  return std::isalnum(c) || c >= 0x80;
}

std::string canonical_file_form(const Vocabulary& vocab) {
  std::string out;
  for (const auto& t : vocab.tokens) {
    out += t;
    out += '\n';
  }
  return out;
}

}  // namespace

int Vocabulary::id(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? -1 : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens.size()) {
    throw std::invalid_argument("Vocabulary::token: id out of range: " +
                                std::to_string(id));
  }
  return tokens[static_cast<size_t>(id)];
}

uint64_t Vocabulary::content_hash() const {
  return fnv1a64(canonical_file_form(*this));
}

std::vector<std::string> pretokenize(const std::string& text, bool lowercase) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (is_word_char(c)) {
      cur.push_back(lowercase ? static_cast<char>(std::tolower(c)) : ch);
    } else {
      flush();
      if (!std::isspace(c)) {
        // Each punctuation character is its own word.
        words.emplace_back(1, lowercase ? static_cast<char>(std::tolower(c)) : ch);
      }
    }
  }
  flush();
  return words;
}

namespace {

Vocabulary assemble_vocab(const std::vector<std::string>& content_tokens) {
  Vocabulary vocab;
  vocab.tokens.reserve(content_tokens.size() + Vocabulary::kSpecialCount);
  for (const char* s : kSpecialNames) vocab.tokens.emplace_back(s);
  vocab.tokens.insert(vocab.tokens.end(), content_tokens.begin(),
                      content_tokens.end());
  for (size_t i = 0; i < vocab.tokens.size(); ++i) {
    auto [it, inserted] = vocab.index.emplace(vocab.tokens[i], static_cast<int>(i));
    if (!inserted) {
      throw std::invalid_argument("vocabulary contains duplicate token: " +
                                  vocab.tokens[i]);
    }
  }
  return vocab;
}

}  // namespace

Vocabulary train_vocab(const std::vector<std::string>& corpus,
                       const VocabTrainOptions& options) {
  // Word frequencies over the pre-tokenized corpus.
  std::map<std::string, int64_t> word_freq;
  for (const auto& text : corpus) {
    for (auto& w : pretokenize(text, options.lowercase)) ++word_freq[w];
  }
  if (word_freq.empty()) {
    throw std::invalid_argument("train_vocab: corpus has no tokens");
  }

  // Initial segmentation: first byte plain, following bytes "##"-prefixed.
  struct Word {
    std::vector<std::string> pieces;
    int64_t freq;
  };
  std::vector<Word> words;
  words.reserve(word_freq.size());
  std::map<std::string, int64_t> piece_totals;  // occurrences weighted by freq
  std::vector<std::string> vocab_order;         // insertion order
  std::map<std::string, bool> in_vocab;
  auto add_piece = [&](const std::string& p) {
    if (!in_vocab[p]) {
      in_vocab[p] = true;
      vocab_order.push_back(p);
    }
  };
  for (const auto& [word, freq] : word_freq) {
    Word w;
    w.freq = freq;
    for (size_t i = 0; i < word.size(); ++i) {
      std::string piece = (i == 0) ? std::string(1, word[i])
                                   : "##" + std::string(1, word[i]);
      w.pieces.push_back(piece);
      piece_totals[piece] += freq;
      add_piece(piece);  // base alphabet, never pruned
    }
    words.push_back(std::move(w));
  }

  const size_t base_size = Vocabulary::kSpecialCount + vocab_order.size();
  if (options.vocab_size < base_size) {
    throw std::invalid_argument(
        "train_vocab: vocab_size " + std::to_string(options.vocab_size) +
        " below specials plus base alphabet (" + std::to_string(base_size) + ")");
  }

  // Likelihood-driven pair merging: score(a,b) = count(ab)/(count(a)count(b)).
  while (Vocabulary::kSpecialCount + vocab_order.size() < options.vocab_size) {
    std::map<std::pair<std::string, std::string>, int64_t> pair_counts;
    for (const auto& w : words) {
      for (size_t i = 0; i + 1 < w.pieces.size(); ++i) {
        pair_counts[{w.pieces[i], w.pieces[i + 1]}] += w.freq;
      }
    }
    if (pair_counts.empty()) break;

    bool found = false;
    std::pair<std::string, std::string> best;
    double best_score = 0.0;
    int64_t best_count = 0;
    std::string best_merged;
    for (const auto& [pair, count] : pair_counts) {
      if (count < options.min_pair_count) continue;
      const double score =
          static_cast<double>(count) /
          (static_cast<double>(piece_totals[pair.first]) *
           static_cast<double>(piece_totals[pair.second]));
      std::string merged = pair.first + pair.second.substr(2);
      // Ties: larger pair count, then lexicographically smaller result.
      const bool better =
          !found || score > best_score ||
          (score == best_score &&
           (count > best_count || (count == best_count && merged < best_merged)));
      if (better) {
        found = true;
        best = pair;
        best_score = score;
        best_count = count;
        best_merged = std::move(merged);
      }
    }
    if (!found) break;

    add_piece(best_merged);
    for (auto& w : words) {
      for (size_t i = 0; i + 1 < w.pieces.size();) {
        if (w.pieces[i] == best.first && w.pieces[i + 1] == best.second) {
          piece_totals[w.pieces[i]] -= w.freq;
          piece_totals[w.pieces[i + 1]] -= w.freq;
          piece_totals[best_merged] += w.freq;
          w.pieces[i] = best_merged;
          w.pieces.erase(w.pieces.begin() + static_cast<long>(i) + 1);
        } else {
          ++i;
        }
      }
    }
  }

  return assemble_vocab(vocab_order);
}

namespace {

/// Greedy longest-match segmentation of one word. Returns false when some
/// position has no matching piece (caller substitutes [UNK]).
bool segment_word(const std::string& word, const Vocabulary& vocab,
                  std::vector<int>* out) {
  const size_t start_size = out->size();
  size_t pos = 0;
  while (pos < word.size()) {
    const std::string prefix = pos == 0 ? "" : "##";
    int match_id = -1;
    size_t match_len = 0;
    for (size_t len = word.size() - pos; len >= 1; --len) {
      const int id = vocab.id(prefix + word.substr(pos, len));
      if (id >= 0) {
        match_id = id;
        match_len = len;
        break;
      }
    }
    if (match_id < 0) {
      out->resize(start_size);
      return false;
    }
    out->push_back(match_id);
    pos += match_len;
  }
  return true;
}

}  // namespace

std::vector<int> encode_content(const std::string& text, const Vocabulary& vocab,
                                bool lowercase) {
  std::vector<int> ids;
  for (const auto& word : pretokenize(text, lowercase)) {
    if (!segment_word(word, vocab, &ids)) ids.push_back(Vocabulary::kUnk);
  }
  return ids;
}

size_t TokenSequence::unpadded_length() const {
  size_t n = 0;
  for (uint8_t m : attention_mask) n += m;
  return n;
}

TokenSequence encode(const std::string& text, const Vocabulary& vocab,
                     size_t max_len, bool lowercase) {
  if (max_len < 3) {
    throw std::invalid_argument("encode: max_len must be >= 3");
  }
  std::vector<int> content = encode_content(text, vocab, lowercase);
  TokenSequence seq;
  seq.original_length = static_cast<int>(content.size());
  if (content.size() > max_len - 2) content.resize(max_len - 2);

  seq.ids.reserve(max_len);
  seq.ids.push_back(Vocabulary::kCls);
  seq.ids.insert(seq.ids.end(), content.begin(), content.end());
  seq.ids.push_back(Vocabulary::kSep);
  seq.attention_mask.assign(seq.ids.size(), 1);
  seq.ids.resize(max_len, Vocabulary::kPad);
  seq.attention_mask.resize(max_len, 0);
  return seq;
}

std::string decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);  // validates range
    if (id < Vocabulary::kSpecialCount) continue;
    if (tok.rfind("##", 0) == 0) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << canonical_file_form(vocab);
  if (!out) throw std::runtime_error("write failed: " + path);
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < Vocabulary::kSpecialCount) {
    throw std::runtime_error("vocabulary file too short: " + path);
  }
  for (int i = 0; i < Vocabulary::kSpecialCount; ++i) {
    if (lines[static_cast<size_t>(i)] != kSpecialNames[i]) {
      throw std::runtime_error("vocabulary file missing special token " +
                               std::string(kSpecialNames[i]) + ": " + path);
    }
  }
  return assemble_vocab(std::vector<std::string>(
      lines.begin() + Vocabulary::kSpecialCount, lines.end()));
}

}  // namespace codesearch
