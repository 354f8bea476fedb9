#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "codesearch/corpus.hpp"
#include "codesearch/encoder.hpp"
#include "codesearch/ranking.hpp"
#include "codesearch/tokenizer.hpp"

namespace codesearch {

enum class QueryPretrain { none, english };
enum class CodePretrain { none, js, java, py, top, all };

std::string to_string(QueryPretrain p);
std::string to_string(CodePretrain p);
QueryPretrain query_pretrain_from_string(const std::string& s);
CodePretrain code_pretrain_from_string(const std::string& s);

struct Provenance {
  QueryPretrain q_pretrain = QueryPretrain::none;
  CodePretrain c_pretrain = CodePretrain::none;
};

enum class Pooling { mean_over_unpadded };

/// Two encoders projecting queries and code into one d-dimensional space.
/// The query tower lowercases its input; the code tower keeps case.
struct MemModel {
  EncoderWeights query_encoder;
  Vocabulary query_vocab;
  EncoderWeights code_encoder;
  Vocabulary code_vocab;
  int max_len_query = 30;
  int max_len_code = 256;
  Pooling pooling = Pooling::mean_over_unpadded;
  double temperature = 0.07;
  Provenance provenance;

  int d() const { return query_encoder.config.hidden_size; }
  /// Throws std::invalid_argument when tower dimensions disagree.
  void validate() const;
};

/// Mean of encoder outputs over unpadded positions, L2-normalized.
Eigen::VectorXd embed_query(const MemModel& model, const std::string& text);
Eigen::VectorXd embed_code(const MemModel& model, const std::string& text);

/// Cosine similarity; throws std::invalid_argument on a zero vector.
double similarity(const Eigen::VectorXd& q, const Eigen::VectorXd& c);

struct FinetuneConfig {
  double learning_rate = 5e-4;
  double lr_decay = 0.98;  // multiplicative, per epoch
  double momentum = 0.85;  // first-moment coefficient of the optimizer
  double dropout = 0.1;
  int max_len_query = 30;
  int max_len_code = 256;
  OptimizerKind optimizer = OptimizerKind::lamb;
  int epochs = 5;
  int batch_size = 32;
  double loss_temperature = 0.07;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const;
};

struct FinetuneResult {
  MemModel model;  // the best-validation-MRR snapshot
  /// val_mrr[e] = validation MRR after e epochs; entry 0 precedes training.
  std::vector<double> val_mrr;
};

/// In-batch softmax fine-tuning: each query's positive is its own code,
/// every other in-batch code is a negative, logits are cosine/temperature.
/// Throws std::runtime_error with batch diagnostics on non-finite loss.
FinetuneResult finetune(MemModel model, const std::vector<QueryCodePair>& train,
                        const std::vector<QueryCodePair>& val,
                        const FinetuneConfig& config);

/// Loss evaluation for tests (dropout off). The gradient variant accumulates
/// into the two gradient sets.
double finetune_batch_loss(const MemModel& model,
                           const std::vector<QueryCodePair>& batch,
                           double temperature);
double finetune_batch_loss_grad(const MemModel& model,
                                const std::vector<QueryCodePair>& batch,
                                double temperature, EncoderWeights& query_grads,
                                EncoderWeights& code_grads);

struct EmbeddingIndex {
  std::vector<DocId> doc_ids;
  Eigen::MatrixXd vectors;  // |docs| x d, rows L2-normalized

  size_t size() const { return doc_ids.size(); }
};

/// Throws std::invalid_argument on duplicate ids. Row order = input order.
EmbeddingIndex build_embedding_index(const MemModel& model,
                                     const std::vector<std::pair<DocId, std::string>>& docs,
                                     unsigned threads = 1);

RankedResults search_embeddings(const EmbeddingIndex& index, const MemModel& model,
                                const std::string& query, size_t limit);

/// Ranks only the docs named in pool (ids must exist in the index).
RankedResults rank_embedding_subset(const EmbeddingIndex& index,
                                    const Eigen::VectorXd& query_vec,
                                    const std::vector<DocId>& pool, size_t limit);

void save_embedding_index(const EmbeddingIndex& index, const std::string& path);
EmbeddingIndex load_embedding_index(const std::string& path);

/// Directory layout: query.ckpt, code.ckpt, query.vocab, code.vocab,
/// manifest.json {d, pooling, provenance, temperature, vocabulary hashes}.
void save_mem_model(const MemModel& model, const std::string& dir);
MemModel load_mem_model(const std::string& dir);

}  // namespace codesearch
