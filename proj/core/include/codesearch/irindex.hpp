#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "codesearch/ranking.hpp"

namespace codesearch {

struct Posting {
  DocId doc_id = 0;
  int32_t tf = 0;
};

struct InvertedIndex {
  /// term -> postings sorted by doc id. Ordered map keeps persistence and
  /// iteration deterministic.
  std::map<std::string, std::vector<Posting>> postings;
  std::unordered_map<DocId, int32_t> doc_lengths;

  int64_t doc_count() const { return static_cast<int64_t>(doc_lengths.size()); }
  int32_t doc_freq(const std::string& term) const;
};

/// Lowercases and splits on every non-alphanumeric character.
/// Intentionally unrelated to the subword tokenizer.
std::vector<std::string> analyze(const std::string& text);

/// Throws std::invalid_argument on duplicate doc ids.
InvertedIndex build_index(const std::vector<std::pair<DocId, std::string>>& docs);

enum class IrScorer { classic_tfidf, bm25 };

/// Scores only documents sharing at least one term with the query.
/// classic_tfidf: score(q,d) = sum_t sqrt(tf) * idf^2 / sqrt(|d|) with
/// idf = 1 + ln(N / (df + 1)). bm25 uses k1 = 1.2, b = 0.75.
RankedResults search_ir(const InvertedIndex& index, const std::string& query,
                        size_t limit, IrScorer scorer = IrScorer::classic_tfidf);

/// Binary persistence: header {N}, doc table, term dictionary with
/// delta-encoded postings.
void save_ir_index(const InvertedIndex& index, const std::string& path);
InvertedIndex load_ir_index(const std::string& path);

}  // namespace codesearch
