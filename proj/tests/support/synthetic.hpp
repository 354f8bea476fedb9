#pragma once

// Seeded synthetic corpora for tests: a fixed query keyword list, an
// injective keyword -> code symbol map, pre-training functions with a
// deterministic next-line structure, and query-code pairs whose gold code is
// identified by its symbol triple.

#include <cstdint>
#include <string>
#include <vector>

#include "codesearch/corpus.hpp"

namespace codesearch::synth {

inline constexpr int kNumKeywords = 30;

/// Thirty fixed lowercase query words.
const std::vector<std::string>& keywords();

/// The code-side symbol for a keyword; injective, lexically disjoint from
/// the keyword list so token matching cannot bridge the two sides.
std::string symbol_for(int keyword_index);

/// Functions over code symbols: a chain of assignments where each line
/// consumes the variable defined on the previous line.
std::vector<PretrainFunction> code_pretrain_corpus(size_t n, uint64_t seed);

/// Keyword "sentences" with the same chaining (line t+1 opens with the word
/// that closed line t); stands in for an English pre-training corpus.
std::vector<PretrainFunction> text_pretrain_corpus(size_t n, uint64_t seed);

/// Pairs with globally distinct keyword triples: the query names three
/// keywords, the code calls exactly the three mapped symbols. n is capped by
/// the number of distinct triples. Upvotes and line counts pass the default
/// mining thresholds.
std::vector<QueryCodePair> make_pairs(size_t n, uint64_t seed);

/// make_pairs with the code spelling out the query's own keywords instead of
/// opaque symbols, so keyword search has something to match. Gold is still
/// the only code containing all three query terms.
std::vector<QueryCodePair> overlapping_pairs(size_t n, uint64_t seed);

/// Thirty alternate spellings, one per keyword. They appear only in the
/// mixed pre-training corpora, never in make_pairs output.
const std::vector<std::string>& synonyms();

/// Alternate callable name for a keyword index ("alt07"); the code-side
/// counterpart of synonyms().
std::string alt_symbol_for(int keyword_index);

/// text_pretrain_corpus with every word independently rendered as its base
/// or synonym spelling, plus occasional two-word lines pairing the spellings
/// of one keyword directly.
std::vector<PretrainFunction> mixed_text_corpus(size_t n, uint64_t seed);

/// code_pretrain_corpus with every callee rendered as its sym or alt name,
/// plus occasional lines applying one spelling of a symbol to the other.
std::vector<PretrainFunction> mixed_code_corpus(size_t n, uint64_t seed);

/// make_pairs with single-expression codes ("return a(b(c));"), so the three
/// symbols carry most of the token mass instead of boilerplate.
std::vector<QueryCodePair> compact_pairs(size_t n, uint64_t seed);

/// The pair's query respelled with synonyms(); the code is untouched.
QueryCodePair synonym_query(const QueryCodePair& pair);

/// The pair's code with every symNN call renamed to altNN; the query is
/// untouched.
QueryCodePair alias_code(const QueryCodePair& pair);

}  // namespace codesearch::synth
