#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codesearch/corpus.hpp"

namespace codesearch {

/// Error-tolerant parse result. Nodes live in an arena; children are indices.
/// Leaves carry source tokens; unparseable spans become "error" nodes whose
/// tokens are still present as leaves.
struct SimplifiedTree {
  struct Node {
    std::string kind;          // e.g. "module","stmt","call","args","error"
    std::string token;         // non-empty only on leaves
    std::vector<int> children; // indices into nodes
  };

  std::vector<Node> nodes;
  int root = -1;
  Lang lang = Lang::js;

  bool is_leaf(int i) const { return nodes[static_cast<size_t>(i)].children.empty(); }
  /// Deterministic s-expression form, used by golden fixtures.
  std::string serialize() const;
};

/// Supported languages: js, java, py. Never throws on malformed input.
SimplifiedTree parse_code(const std::string& code, Lang lang);

/// Multiset of feature strings over four families (see FEATURES.md):
/// token, parent-chain, adjacent-sibling, and variable-usage features with
/// variable names abstracted to a placeholder.
struct FeatureBag {
  std::map<std::string, int> counts;

  int64_t total() const;
  void add(const std::string& feature, int n = 1);
  /// Sorted "feature\tcount" lines, used by golden fixtures.
  std::string serialize() const;
};

FeatureBag extract_features(const SimplifiedTree& tree);

/// Multiset intersection size: sum over features of min(count_a, count_b).
int64_t overlap(const FeatureBag& a, const FeatureBag& b);

/// Overlap of every pool candidate against true_code, converted to ranks
/// (average ranks on ties), min-max normalized so the best overlap maps to 1;
/// returns the chosen candidate's value. All-equal overlaps map to 0.5.
/// Throws std::invalid_argument when |pool| < 2 or chosen_code is not in it.
double aroma_score(const std::string& true_code, const std::string& chosen_code,
                   const std::vector<std::string>& pool, Lang lang);

/// Same scorer over precomputed bags; chosen_index addresses pool_bags.
double aroma_score_bags(const FeatureBag& true_bag, size_t chosen_index,
                        const std::vector<FeatureBag>& pool_bags);

}  // namespace codesearch
