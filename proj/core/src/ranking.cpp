#include "codesearch/ranking.hpp"

#include <algorithm>
#include <stdexcept>

namespace codesearch {

std::optional<size_t> RankedResults::rank_of(DocId doc_id) const {
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].doc_id == doc_id) return i + 1;
  }
  return std::nullopt;
}

void sort_ranked(std::vector<ScoredDoc>& entries) {
  std::sort(entries.begin(), entries.end(),
            [](const ScoredDoc& a, const ScoredDoc& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.doc_id < b.doc_id;
            });
}

void check_ranked(const RankedResults& results) {
  for (size_t i = 1; i < results.entries.size(); ++i) {
    const auto& prev = results.entries[i - 1];
    const auto& cur = results.entries[i];
    const bool ok = prev.score > cur.score ||
                    (prev.score == cur.score && prev.doc_id < cur.doc_id);
    if (!ok) throw std::logic_error("RankedResults: entries out of ranked order");
  }
}

}  // namespace codesearch
