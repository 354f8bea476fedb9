#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace codesearch {

enum class Lang { js, java, py, php, go, ruby };

std::string to_string(Lang lang);
Lang lang_from_string(const std::string& name);

enum class PostType { question, answer };

/// One post from a StackOverflow-style JSONL dump.
struct RawPost {
  int64_t post_id = 0;
  PostType post_type = PostType::question;
  std::optional<int64_t> accepted_answer_id;
  std::optional<int64_t> parent_id;
  std::vector<std::string> tags;
  std::string title;
  std::string body;
  int score = 0;
};

/// A mined (natural-language query, code snippet) pair.
struct QueryCodePair {
  int64_t id = 0;  // question post id
  Lang lang = Lang::js;
  std::string query;
  std::string code;
  int q_upvotes = 0;
  int a_upvotes = 0;
  int loc = 0;
};

/// One function-level snippet used for unsupervised pre-training.
struct PretrainFunction {
  int64_t id = 0;
  Lang lang = Lang::js;
  std::string code;
  int64_t token_count = 0;
};

struct ParseOptions {
  /// When set, malformed lines are collected as issues instead of aborting.
  bool skip_malformed = false;
};

struct ParseIssue {
  size_t line_no = 0;  // 1-based
  std::string message;
};

struct DumpParseResult {
  std::vector<RawPost> posts;
  std::vector<ParseIssue> issues;
};

/// Parses a JSONL post dump. Lines with PostTypeId other than 1/2 are
/// silently skipped; structurally malformed lines abort with the line number
/// unless options.skip_malformed is set.
DumpParseResult parse_dump(std::istream& in, const ParseOptions& options = {});

/// Concatenates the contents of every <pre><code> block of an answer body,
/// HTML-entity decoded, joined by newline. Empty string when no block exists.
std::string extract_code(const std::string& answer_body);

/// Stage counters for the mining funnel plus per-step rejection counts.
struct FilterCounters {
  int64_t questions = 0;             // language-tagged questions seen
  int64_t with_accepted_answer = 0;
  int64_t with_code_snippet = 0;
  int64_t final_pairs = 0;

  int64_t rejected_tag = 0;          // not language-tagged / unusable title
  int64_t rejected_no_accepted = 0;  // no accepted answer
  int64_t rejected_no_snippet = 0;   // accepted answer has no code block
  int64_t rejected_q_upvotes = 0;    // question upvotes below threshold
  int64_t rejected_a_upvotes = 0;    // answer upvotes below threshold
  int64_t rejected_loc = 0;          // snippet has too few lines
};

struct FilterThresholds {
  int min_q_upvotes = 3;
  int min_a_upvotes = 3;
  int min_loc = 3;
};

/// Mines query-code pairs for one language. Each candidate question is
/// attributed to the first mining step it fails; counters are monotonically
/// non-increasing down the funnel.
std::vector<QueryCodePair> filter_pairs(const std::vector<RawPost>& posts,
                                        Lang lang,
                                        const FilterThresholds& thresholds = {},
                                        FilterCounters* counters = nullptr);

struct StripResult {
  std::string code;
  /// False when the lexer hit a construct it could not interpret; code is
  /// then returned unchanged.
  bool parsed_cleanly = true;
};

/// Removes comments (and Python docstrings) at the lexer level, preserving
/// string literals and all non-comment text.
StripResult strip_comments(const std::string& code, Lang lang);

///// Builds pre-training functions from raw snippets: strips comments, counts
/// tokens, and drops snippets that are empty afterwards.
std::vector<PretrainFunction> build_pretrain_functions(
    const std::vector<std::pair<int64_t, std::string>>& snippets, Lang lang);

/// Deterministic k-fold split with, per fold, a 90/10 train/val division of
/// the nine non-test folds.
struct FoldPlan {
  uint64_t seed = 0;
  int k = 0;
  /// Fold index per item, in corpus order.
  std::vector<int> assignments;

  struct Fold {
    std::vector<size_t> train;  // indices into the item list
    std::vector<size_t> val;
    std::vector<size_t> test;
  };
  std::vector<Fold> folds;
};

FoldPlan split_folds(size_t n_items, int k, uint64_t seed);
FoldPlan split_folds(const std::vector<QueryCodePair>& pairs, int k, uint64_t seed);

/// Persistence. Pairs and pre-training functions are JSONL, one object per
/// line; the fold plan is a single JSON object {"seed","k","assignments"}
/// from which the train/val/test lists are re-derived.
void write_pairs_jsonl(const std::vector<QueryCodePair>& pairs, std::ostream& out);
std::vector<QueryCodePair> read_pairs_jsonl(std::istream& in);
void write_pretrain_jsonl(const std::vector<PretrainFunction>& fns, std::ostream& out);
std::vector<PretrainFunction> read_pretrain_jsonl(std::istream& in);
void save_fold_plan(const FoldPlan& plan, const std::string& path);
FoldPlan load_fold_plan(const std::string& path);

}  // namespace codesearch
