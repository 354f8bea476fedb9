#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace codesearch {

using DocId = int64_t;

struct ScoredDoc {
  DocId doc_id = 0;
  double score = 0.0;
};

/// A ranked list: scores non-increasing, ties broken by ascending doc id.
struct RankedResults {
  std::vector<ScoredDoc> entries;
  std::optional<int64_t> query_id;

  size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  /// 1-based rank of doc_id, or nullopt when absent.
  std::optional<size_t> rank_of(DocId doc_id) const;
};

/// Sorts into ranked order: score descending, doc id ascending on ties.
void sort_ranked(std::vector<ScoredDoc>& entries);

/// Throws std::logic_error when the ranked-order invariant is violated.
void check_ranked(const RankedResults& results);

}  // namespace codesearch
