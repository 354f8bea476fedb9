#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "codesearch/corpus.hpp"
#include "codesearch/ranking.hpp"

namespace codesearch {

/// Gold rank of one query: 1-based position, or nullopt on a miss.
using Rank = std::optional<int64_t>;

/// 1/rank; misses score 0. Throws std::invalid_argument on rank < 1.
double reciprocal_rank(Rank rank);

/// Mean reciprocal rank. Throws std::invalid_argument on an empty list.
double mrr(const std::vector<Rank>& ranks);

/// Fraction of ranks <= k; misses never count. Throws on empty list or k < 1.
double topk_accuracy(const std::vector<Rank>& ranks, int64_t k);

/// Analytic MRR of a uniformly random ranking over a pool: H(n)/n.
double expected_uniform_mrr(size_t pool_size);

enum class EvalKind { eval_1k, eval_full };

std::string to_string(EvalKind kind);
EvalKind eval_kind_from_string(const std::string& s);

struct EvalStrategy {
  EvalKind kind = EvalKind::eval_full;
  size_t pool_size = 1000;  // used by eval_1k: gold + (pool_size - 1) distractors
  uint64_t distractor_seed = 0;
};

struct MetricReport {
  std::string model;
  int fold_id = 0;
  EvalKind strategy = EvalKind::eval_full;
  std::vector<Rank> per_query_rank;
  std::vector<double> per_query_rr;
  double mrr_value = 0.0;
  std::map<int, double> topk;  // keys 1, 3, 5, 10
  std::vector<double> aroma_scores;  // empty when aroma was off
  double aroma_mean = 0.0;
  double aroma_median = 0.0;
  bool aroma_on = false;
  size_t n_queries = 0;
};

/// One saved line per report: {model, fold, strategy, mrr, top1, top3,
/// top5, top10, aroma_mean, aroma_median, n_queries}.
std::string metric_report_to_json(const MetricReport& report);
MetricReport metric_report_from_json(const std::string& json_line);
void append_reports_jsonl(const std::vector<MetricReport>& reports, std::ostream& out);
std::vector<MetricReport> read_reports_jsonl(std::istream& in);

/// A search system under evaluation. prepare() receives the full evaluation
/// corpus once; rank() must be pure and safe for concurrent calls.
struct EvalDoc {
  DocId id = 0;
  std::string code;
  Lang lang = Lang::js;
};

class SearchBackend {
 public:
  virtual ~SearchBackend() = default;
  virtual void prepare(const std::vector<EvalDoc>& corpus) = 0;
  /// Full ranking restricted to pool ids (any order), best first.
  virtual RankedResults rank(const std::string& query,
                             const std::vector<DocId>& pool) const = 0;
};

struct EvaluateOptions {
  bool aroma_on = false;
  std::string model_name;
  int fold_id = 0;
  unsigned threads = 1;
};

/// Evaluates one backend on a test split. The evaluation corpus is the test
/// split's own code snippets. For eval_1k each query gets a pool of its gold
/// plus pool_size-1 seeded distractors; eval_full ranks the whole split.
/// Throws std::invalid_argument when |test| < pool_size under eval_1k.
MetricReport evaluate_run(SearchBackend& backend,
                          const std::vector<QueryCodePair>& test,
                          const EvalStrategy& strategy,
                          const EvaluateOptions& options = {});

/// Builds a fold's backend after training on (train, val).
using BackendFactory = std::function<std::unique_ptr<SearchBackend>(
    int fold_id, const std::vector<QueryCodePair>& train,
    const std::vector<QueryCodePair>& val)>;

struct MetricSummary {
  double mrr_value = 0.0;
  std::map<int, double> topk;
  double aroma_mean = 0.0;
  double aroma_median = 0.0;
};

struct CrossValidationResult {
  std::vector<MetricReport> reports;  // one per fold, fold order
  MetricSummary median;               // per-metric median across folds
};

/// Runs every fold of the plan; fold-level failures are propagated with the
/// fold id prepended to the message.
CrossValidationResult cross_validate(const BackendFactory& factory,
                                     const FoldPlan& plan,
                                     const std::vector<QueryCodePair>& pairs,
                                     const EvalStrategy& strategy,
                                     const EvaluateOptions& options = {});

MetricSummary median_summary(const std::vector<MetricReport>& reports);

/// Median of a sample (mean of the two middle values on even sizes).
double median(std::vector<double> values);

struct KruskalResult {
  double h = 0.0;
  double p_value = 1.0;
};

/// Tie-corrected Kruskal-Wallis H; p from the chi-squared approximation with
/// (#groups - 1) degrees of freedom. All-constant input yields H=0, p=1.
/// Throws std::invalid_argument on fewer than two groups or an empty group.
KruskalResult kruskal_wallis(const std::vector<std::vector<double>>& groups);

/// Vargha-Delaney effect size:
/// (#{a_i > b_j} + 0.5 * #{a_i = b_j}) / (|a| * |b|).
double vargha_delaney(const std::vector<double>& a, const std::vector<double>& b);

/// Median-over-folds comparison tables, one row per (model, strategy).
std::string render_report_table(const std::vector<MetricReport>& reports);
std::string render_report_csv(const std::vector<MetricReport>& reports);

}  // namespace codesearch
