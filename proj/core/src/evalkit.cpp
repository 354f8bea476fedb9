#include "codesearch/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>
#include <nlohmann/json.hpp>

#include "codesearch/aroma.hpp"
#include "codesearch/util.hpp"

namespace codesearch {

using nlohmann::json;

double reciprocal_rank(Rank rank) {
  if (!rank) return 0.0;
  if (*rank < 1) {
    throw std::invalid_argument("reciprocal_rank: rank must be >= 1");
  }
  return 1.0 / static_cast<double>(*rank);
}

double mrr(const std::vector<Rank>& ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: empty rank list");
  double sum = 0.0;
  for (const Rank& r : ranks) sum += reciprocal_rank(r);
  return sum / static_cast<double>(ranks.size());
}

double topk_accuracy(const std::vector<Rank>& ranks, int64_t k) {
  if (ranks.empty()) throw std::invalid_argument("topk_accuracy: empty rank list");
  if (k < 1) throw std::invalid_argument("topk_accuracy: k must be >= 1");
  int64_t hits = 0;
  for (const Rank& r : ranks) {
    if (r && *r >= 1 && *r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double expected_uniform_mrr(size_t pool_size) {
  if (pool_size == 0) throw std::invalid_argument("expected_uniform_mrr: empty pool");
  double harmonic = 0.0;
  for (size_t r = 1; r <= pool_size; ++r) harmonic += 1.0 / static_cast<double>(r);
  return harmonic / static_cast<double>(pool_size);
}

std::string to_string(EvalKind kind) {
  return kind == EvalKind::eval_1k ? "eval_1k" : "eval_full";
}

EvalKind eval_kind_from_string(const std::string& s) {
  if (s == "eval_1k") return EvalKind::eval_1k;
  if (s == "eval_full") return EvalKind::eval_full;
  throw std::invalid_argument("unknown evaluation strategy: " + s);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty sample");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

const int kTopKs[] = {1, 3, 5, 10};

/// pool_size-1 distinct distractors from [0, n) excluding gold_idx, by
/// partial Fisher-Yates over the candidate list.
std::vector<size_t> sample_distractors(size_t n, size_t gold_idx, size_t count,
                                       Rng& rng) {
  std::vector<size_t> candidates;
  candidates.reserve(n - 1);
  for (size_t i = 0; i < n; ++i) {
    if (i != gold_idx) candidates.push_back(i);
  }
  for (size_t i = 0; i < count; ++i) {
    const size_t j = i + static_cast<size_t>(rng.uniform(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(count);
  return candidates;
}

}  // namespace

MetricReport evaluate_run(SearchBackend& backend,
                          const std::vector<QueryCodePair>& test,
                          const EvalStrategy& strategy,
                          const EvaluateOptions& options) {
  if (test.empty()) throw std::invalid_argument("evaluate_run: empty test set");
  if (strategy.kind == EvalKind::eval_1k) {
    if (strategy.pool_size < 2) {
      throw std::invalid_argument("evaluate_run: pool_size must be >= 2");
    }
    if (test.size() < strategy.pool_size) {
      throw std::invalid_argument(
          "evaluate_run: test split smaller than the evaluation pool (" +
          std::to_string(test.size()) + " < " +
          std::to_string(strategy.pool_size) + ")");
    }
  }

  std::vector<EvalDoc> corpus;
  corpus.reserve(test.size());
  for (const auto& pair : test) corpus.push_back({pair.id, pair.code, pair.lang});
  backend.prepare(corpus);

  // Structural feature bags are query-independent; compute once.
  std::vector<FeatureBag> bags;
  if (options.aroma_on) {
    bags.resize(test.size());
    parallel_chunks(test.size(), options.threads, [&](size_t b, size_t e) {
      for (size_t i = b; i < e; ++i) {
        bags[i] = extract_features(parse_code(test[i].code, test[i].lang));
      }
    });
  }

  const size_t n = test.size();
  std::vector<Rank> ranks(n);
  std::vector<double> aroma_scores(options.aroma_on ? n : 0, 0.0);
  std::vector<DocId> all_ids;
  all_ids.reserve(n);
  for (const auto& pair : test) all_ids.push_back(pair.id);

  parallel_chunks(n, options.threads, [&](size_t begin, size_t end) {
    for (size_t qi = begin; qi < end; ++qi) {
      const auto& pair = test[qi];

      std::vector<DocId> pool;
      std::vector<size_t> pool_idx;  // indices into test, pool order
      if (strategy.kind == EvalKind::eval_full) {
        pool = all_ids;
        if (options.aroma_on) {
          pool_idx.resize(n);
          for (size_t i = 0; i < n; ++i) pool_idx[i] = i;
        }
      } else {
        Rng rng(mix_seed(strategy.distractor_seed,
                         static_cast<uint64_t>(options.fold_id),
                         static_cast<uint64_t>(pair.id)));
        pool_idx = sample_distractors(n, qi, strategy.pool_size - 1, rng);
        pool_idx.insert(pool_idx.begin(), qi);  // gold first; order is arbitrary
        pool.reserve(pool_idx.size());
        for (size_t i : pool_idx) pool.push_back(test[i].id);
      }

      const RankedResults ranking = backend.rank(pair.query, pool);
      const auto rank = ranking.rank_of(pair.id);
      ranks[qi] = rank ? Rank(static_cast<int64_t>(*rank)) : std::nullopt;

      if (options.aroma_on) {
        // Score the top-ranked candidate against the gold snippet. An empty
        // ranking offers no candidate and scores 0.
        if (ranking.empty()) {
          aroma_scores[qi] = 0.0;
        } else {
          const DocId chosen = ranking.entries[0].doc_id;
          size_t chosen_pos = pool_idx.size();
          std::vector<FeatureBag> pool_bags;
          pool_bags.reserve(pool_idx.size());
          for (size_t p = 0; p < pool_idx.size(); ++p) {
            pool_bags.push_back(bags[pool_idx[p]]);
            if (test[pool_idx[p]].id == chosen) chosen_pos = p;
          }
          aroma_scores[qi] = aroma_score_bags(bags[qi], chosen_pos, pool_bags);
        }
      }
    }
  });

  MetricReport report;
  report.model = options.model_name;
  report.fold_id = options.fold_id;
  report.strategy = strategy.kind;
  report.per_query_rank = ranks;
  report.per_query_rr.reserve(n);
  for (const Rank& r : ranks) report.per_query_rr.push_back(reciprocal_rank(r));
  report.mrr_value = mrr(ranks);
  for (int k : kTopKs) report.topk[k] = topk_accuracy(ranks, k);
  report.aroma_on = options.aroma_on;
  report.n_queries = n;
  if (options.aroma_on) {
    report.aroma_scores = aroma_scores;
    double sum = 0.0;
    for (double s : aroma_scores) sum += s;
    report.aroma_mean = sum / static_cast<double>(n);
    report.aroma_median = median(aroma_scores);
  }
  return report;
}

CrossValidationResult cross_validate(const BackendFactory& factory,
                                     const FoldPlan& plan,
                                     const std::vector<QueryCodePair>& pairs,
                                     const EvalStrategy& strategy,
                                     const EvaluateOptions& options) {
  if (plan.assignments.size() != pairs.size()) {
    throw std::invalid_argument("cross_validate: fold plan covers " +
                                std::to_string(plan.assignments.size()) +
                                " items, corpus has " +
                                std::to_string(pairs.size()));
  }
  CrossValidationResult result;
  for (int f = 0; f < plan.k; ++f) {
    const auto& fold = plan.folds[static_cast<size_t>(f)];
    auto subset = [&](const std::vector<size_t>& idx) {
      std::vector<QueryCodePair> out;
      out.reserve(idx.size());
      for (size_t i : idx) out.push_back(pairs[i]);
      return out;
    };
    try {
      const auto train = subset(fold.train);
      const auto val = subset(fold.val);
      const auto test = subset(fold.test);
      auto backend = factory(f, train, val);
      EvaluateOptions fold_options = options;
      fold_options.fold_id = f;
      result.reports.push_back(
          evaluate_run(*backend, test, strategy, fold_options));
    } catch (const std::exception& e) {
      throw std::runtime_error("fold " + std::to_string(f) + ": " + e.what());
    }
  }
  result.median = median_summary(result.reports);
  return result;
}

MetricSummary median_summary(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("median_summary: no reports");
  MetricSummary summary;
  auto collect = [&](auto&& get) {
    std::vector<double> values;
    values.reserve(reports.size());
    for (const auto& r : reports) values.push_back(get(r));
    return median(std::move(values));
  };
  summary.mrr_value = collect([](const MetricReport& r) { return r.mrr_value; });
  for (int k : kTopKs) {
    summary.topk[k] = collect([k](const MetricReport& r) {
      auto it = r.topk.find(k);
      return it == r.topk.end() ? 0.0 : it->second;
    });
  }
  const bool any_aroma =
      std::any_of(reports.begin(), reports.end(),
                  [](const MetricReport& r) { return r.aroma_on; });
  if (any_aroma) {
    summary.aroma_mean = collect([](const MetricReport& r) { return r.aroma_mean; });
    summary.aroma_median =
        collect([](const MetricReport& r) { return r.aroma_median; });
  }
  return summary;
}

KruskalResult kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) {
    throw std::invalid_argument("kruskal_wallis: need at least two groups");
  }
  size_t n_total = 0;
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("kruskal_wallis: empty group");
    n_total += g.size();
  }

  struct Obs {
    double value;
    size_t group;
  };
  std::vector<Obs> obs;
  obs.reserve(n_total);
  for (size_t g = 0; g < groups.size(); ++g) {
    for (double v : groups[g]) obs.push_back({v, g});
  }
  std::sort(obs.begin(), obs.end(),
            [](const Obs& a, const Obs& b) { return a.value < b.value; });

  // Average ranks over tie runs; accumulate the tie-correction term.
  std::vector<double> rank_sum(groups.size(), 0.0);
  double tie_term = 0.0;
  size_t i = 0;
  while (i < obs.size()) {
    size_t j = i;
    while (j < obs.size() && obs[j].value == obs[i].value) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const auto t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (size_t k = i; k < j; ++k) rank_sum[obs[k].group] += avg_rank;
    i = j;
  }

  const auto n = static_cast<double>(n_total);
  double h = 0.0;
  for (size_t g = 0; g < groups.size(); ++g) {
    h += rank_sum[g] * rank_sum[g] / static_cast<double>(groups[g].size());
  }
  h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);

  const double correction = 1.0 - tie_term / (n * n * n - n);
  if (correction <= 0.0) {
    // Every observation identical: the statistic is defined as zero.
    return {0.0, 1.0};
  }
  h /= correction;
  if (h < 0.0 && h > -1e-12) h = 0.0;  // numeric dust from the rank sums

  const boost::math::chi_squared dist(static_cast<double>(groups.size() - 1));
  const double p = boost::math::cdf(boost::math::complement(dist, h));
  return {h, p};
}

double vargha_delaney(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("vargha_delaney: empty sample");
  }
  double score = 0.0;
  for (double x : a) {
    for (double y : b) {
      if (x > y) score += 1.0;
      else if (x == y) score += 0.5;
    }
  }
  return score / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

std::string metric_report_to_json(const MetricReport& report) {
  json j;
  j["model"] = report.model;
  j["fold"] = report.fold_id;
  j["strategy"] = to_string(report.strategy);
  j["mrr"] = report.mrr_value;
  auto top = [&](int k) {
    auto it = report.topk.find(k);
    return it == report.topk.end() ? 0.0 : it->second;
  };
  j["top1"] = top(1);
  j["top3"] = top(3);
  j["top5"] = top(5);
  j["top10"] = top(10);
  if (report.aroma_on) {
    j["aroma_mean"] = report.aroma_mean;
    j["aroma_median"] = report.aroma_median;
  } else {
    j["aroma_mean"] = nullptr;
    j["aroma_median"] = nullptr;
  }
  j["n_queries"] = report.n_queries;
  return j.dump();
}

MetricReport metric_report_from_json(const std::string& json_line) {
  const json j = json::parse(json_line);
  MetricReport report;
  report.model = j.at("model").get<std::string>();
  report.fold_id = j.at("fold").get<int>();
  report.strategy = eval_kind_from_string(j.at("strategy").get<std::string>());
  report.mrr_value = j.at("mrr").get<double>();
  report.topk[1] = j.at("top1").get<double>();
  report.topk[3] = j.at("top3").get<double>();
  report.topk[5] = j.at("top5").get<double>();
  report.topk[10] = j.at("top10").get<double>();
  report.aroma_on = !j.at("aroma_mean").is_null();
  if (report.aroma_on) {
    report.aroma_mean = j.at("aroma_mean").get<double>();
    report.aroma_median = j.at("aroma_median").get<double>();
  }
  report.n_queries = j.at("n_queries").get<size_t>();
  return report;
}

void append_reports_jsonl(const std::vector<MetricReport>& reports,
                          std::ostream& out) {
  for (const auto& r : reports) out << metric_report_to_json(r) << '\n';
}

std::vector<MetricReport> read_reports_jsonl(std::istream& in) {
  std::vector<MetricReport> reports;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    reports.push_back(metric_report_from_json(line));
  }
  return reports;
}

namespace {

struct GroupKey {
  std::string model;
  EvalKind strategy;
  bool operator<(const GroupKey& other) const {
    if (model != other.model) return model < other.model;
    return static_cast<int>(strategy) < static_cast<int>(other.strategy);
  }
};

std::map<GroupKey, std::vector<MetricReport>> group_reports(
    const std::vector<MetricReport>& reports) {
  std::map<GroupKey, std::vector<MetricReport>> grouped;
  for (const auto& r : reports) grouped[{r.model, r.strategy}].push_back(r);
  return grouped;
}

}  // namespace

std::string render_report_table(const std::vector<MetricReport>& reports) {
  std::ostringstream out;
  out << std::left << std::setw(34) << "Model" << std::setw(10) << "Strategy"
      << std::right << std::setw(8) << "MRR" << std::setw(8) << "Top-1"
      << std::setw(8) << "Top-3" << std::setw(8) << "Top-5" << std::setw(8)
      << "Top-10" << std::setw(8) << "AROMA" << std::setw(7) << "Folds"
      << '\n';
  out << std::string(99, '-') << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& [key, group] : group_reports(reports)) {
    const MetricSummary s = median_summary(group);
    out << std::left << std::setw(34) << key.model << std::setw(10)
        << (key.strategy == EvalKind::eval_1k ? "1K" : "Full") << std::right
        << std::setw(8) << s.mrr_value << std::setw(8) << s.topk.at(1)
        << std::setw(8) << s.topk.at(3) << std::setw(8) << s.topk.at(5)
        << std::setw(8) << s.topk.at(10);
    const bool any_aroma = std::any_of(group.begin(), group.end(),
                                       [](const MetricReport& r) { return r.aroma_on; });
    if (any_aroma) {
      out << std::setw(8) << s.aroma_median;
    } else {
      out << std::setw(8) << "-";
    }
    out << std::setw(7) << group.size() << '\n';
  }
  return out.str();
}

std::string render_report_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream out;
  out << "model,strategy,mrr,top1,top3,top5,top10,aroma_mean,aroma_median,folds\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& [key, group] : group_reports(reports)) {
    const MetricSummary s = median_summary(group);
    out << key.model << ',' << to_string(key.strategy) << ',' << s.mrr_value
        << ',' << s.topk.at(1) << ',' << s.topk.at(3) << ',' << s.topk.at(5)
        << ',' << s.topk.at(10) << ',';
    const bool any_aroma = std::any_of(group.begin(), group.end(),
                                       [](const MetricReport& r) { return r.aroma_on; });
    if (any_aroma) {
      out << s.aroma_mean << ',' << s.aroma_median;
    } else {
      out << ',';
    }
    out << ',' << group.size() << '\n';
  }
  return out.str();
}

}  // namespace codesearch
