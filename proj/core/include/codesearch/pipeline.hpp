#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "codesearch/corpus.hpp"
#include "codesearch/evalkit.hpp"
#include "codesearch/irindex.hpp"
#include "codesearch/mem.hpp"
#include "codesearch/ranking.hpp"

namespace codesearch {

/// Two-stage model: an IR prefilter feeding an embedding reranker.
struct CombinedModel {
  const InvertedIndex* ir = nullptr;
  const MemModel* mem = nullptr;
  const EmbeddingIndex* embeddings = nullptr;  // over the same doc-id set as ir
  size_t prefilter_limit = 1000;

  /// Throws std::invalid_argument when the indexes cover different ids.
  void validate() const;
};

/// Stage 1: IR search with limit = prefilter_limit. Stage 2: rerank exactly
/// that candidate set by embedding similarity. IR scores are discarded; the
/// result id set equals the prefilter id set.
RankedResults combined_search(const CombinedModel& cm, const std::string& query,
                              IrScorer scorer = IrScorer::classic_tfidf);

/// Model identity in rendered form: "{E_q}-{E_c}-[train]-(test)" for
/// embedding models, "LU-(test)" for the IR baseline, and
/// "LU+{E_q}-{E_c}-[train]-(test)" for the combined pipeline.
struct ExperimentName {
  bool ir_only = false;    // "LU-(test)"
  bool combined = false;   // "LU+..." prefix
  QueryPretrain q_pretrain = QueryPretrain::none;
  CodePretrain c_pretrain = CodePretrain::none;
  std::string train;  // NO, JS, JA, PY, TP, AL
  std::string test;   // JS, JA, PY, TP

  bool operator==(const ExperimentName&) const = default;
};

std::string render_experiment_name(const ExperimentName& name);
/// Inverse of render_experiment_name; throws std::invalid_argument on
/// malformed input. parse(render(n)) == n.
ExperimentName parse_experiment_name(const std::string& text);

enum class ModelVariant { random, zero_shot, no_pretrain, mem, ir, combined };
std::string to_string(ModelVariant v);

/// The variant an experiment name denotes (e.g. train == NO and no
/// pre-training is the random baseline).
ModelVariant variant_of(const ExperimentName& name);

/// Pre-trained weights available to experiments, keyed by provenance label.
struct PretrainedArtifact {
  EncoderWeights weights;
  Vocabulary vocab;
};

struct ModelStore {
  std::optional<PretrainedArtifact> english_query;          // E_q = EN
  std::map<CodePretrain, PretrainedArtifact> code_models;   // E_c label
};

struct ExperimentSpec {
  ExperimentName name;
  ModelVariant variant = ModelVariant::mem;
  EvalStrategy strategy;
  bool aroma_on = false;
  FinetuneConfig finetune;
  /// Architecture for towers that start from random weights.
  EncoderConfig fresh_config;
  uint64_t seed = 0;
  IrScorer ir_scorer = IrScorer::classic_tfidf;
  size_t prefilter_limit = 1000;
  unsigned threads = 1;
};

/// Ready-made backends for evaluate_run / cross_validate.
class IrBackend : public SearchBackend {
 public:
  explicit IrBackend(IrScorer scorer = IrScorer::classic_tfidf) : scorer_(scorer) {}
  void prepare(const std::vector<EvalDoc>& corpus) override;
  RankedResults rank(const std::string& query,
                     const std::vector<DocId>& pool) const override;

 private:
  IrScorer scorer_;
  InvertedIndex index_;
};

class MemBackend : public SearchBackend {
 public:
  explicit MemBackend(MemModel model, unsigned threads = 1)
      : model_(std::move(model)), threads_(threads) {}
  void prepare(const std::vector<EvalDoc>& corpus) override;
  RankedResults rank(const std::string& query,
                     const std::vector<DocId>& pool) const override;
  const MemModel& model() const { return model_; }
  const EmbeddingIndex& index() const { return index_; }

 private:
  MemModel model_;
  unsigned threads_;
  EmbeddingIndex index_;
};

class CombinedBackend : public SearchBackend {
 public:
  CombinedBackend(MemModel model, size_t prefilter_limit,
                  IrScorer scorer = IrScorer::classic_tfidf, unsigned threads = 1)
      : ir_(scorer), mem_(std::move(model), threads), prefilter_limit_(prefilter_limit) {}
  void prepare(const std::vector<EvalDoc>& corpus) override;
  RankedResults rank(const std::string& query,
                     const std::vector<DocId>& pool) const override;

 private:
  IrBackend ir_;
  MemBackend mem_;
  size_t prefilter_limit_;
};

/// Builds the variant's backend per fold (training where the variant calls
/// for it), runs cross-validation, and returns one report per fold. Throws
/// std::invalid_argument on spec/variant mismatches, a combined variant with
/// eval_1k, or missing pre-trained artifacts.
CrossValidationResult run_experiment(const ExperimentSpec& spec,
                                     const std::vector<QueryCodePair>& pairs,
                                     const FoldPlan& plan,
                                     const ModelStore& store);

}  // namespace codesearch
