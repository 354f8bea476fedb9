#include "codesearch/mem.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "binio.hpp"
#include "encoder_internal.hpp"

namespace codesearch {

std::string to_string(QueryPretrain p) {
  return p == QueryPretrain::english ? "EN" : "NO";
}

std::string to_string(CodePretrain p) {
  switch (p) {
    case CodePretrain::none: return "NO";
    case CodePretrain::js: return "JS";
    case CodePretrain::java: return "JA";
    case CodePretrain::py: return "PY";
    case CodePretrain::top: return "TP";
    case CodePretrain::all: return "AL";
  }
  throw std::logic_error("unreachable");
}

QueryPretrain query_pretrain_from_string(const std::string& s) {
  if (s == "NO") return QueryPretrain::none;
  if (s == "EN") return QueryPretrain::english;
  throw std::invalid_argument("unknown query pre-training tag: " + s);
}

CodePretrain code_pretrain_from_string(const std::string& s) {
  if (s == "NO") return CodePretrain::none;
  if (s == "JS") return CodePretrain::js;
  if (s == "JA") return CodePretrain::java;
  if (s == "PY") return CodePretrain::py;
  if (s == "TP") return CodePretrain::top;
  if (s == "AL") return CodePretrain::all;
  throw std::invalid_argument("unknown code pre-training tag: " + s);
}

void MemModel::validate() const {
  query_encoder.config.validate();
  code_encoder.config.validate();
  if (query_encoder.config.hidden_size != code_encoder.config.hidden_size) {
    throw std::invalid_argument("mem model: tower dimensions disagree (" +
                                std::to_string(query_encoder.config.hidden_size) +
                                " vs " +
                                std::to_string(code_encoder.config.hidden_size) +
                                ")");
  }
  if (static_cast<int>(query_vocab.size()) != query_encoder.config.vocab_size ||
      static_cast<int>(code_vocab.size()) != code_encoder.config.vocab_size) {
    throw std::invalid_argument("mem model: vocabulary size does not match encoder");
  }
  if (max_len_query < 3 || max_len_query > query_encoder.config.max_position ||
      max_len_code < 3 || max_len_code > code_encoder.config.max_position) {
    throw std::invalid_argument("mem model: sequence length out of range");
  }
  if (temperature <= 0.0) {
    throw std::invalid_argument("mem model: temperature must be positive");
  }
}

void FinetuneConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("finetune config: lr");
  if (lr_decay <= 0.0 || lr_decay > 1.0) {
    throw std::invalid_argument("finetune config: lr decay must be in (0,1]");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("finetune config: momentum must be in [0,1)");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("finetune config: dropout must be in [0,1)");
  }
  if (epochs < 1) throw std::invalid_argument("finetune config: epochs");
  if (batch_size < 2) {
    throw std::invalid_argument(
        "finetune config: in-batch softmax needs batch size >= 2");
  }
  if (loss_temperature <= 0.0) {
    throw std::invalid_argument("finetune config: temperature must be positive");
  }
  if (max_len_query < 3 || max_len_code < 3) {
    throw std::invalid_argument("finetune config: sequence length too small");
  }
}

namespace {

struct PooledEmbedding {
  internal::EncoderPass pass;
  TokenSequence seq;
  Eigen::VectorXd mean;       // pooled, pre-normalization
  Eigen::VectorXd unit;       // L2-normalized
  double norm = 0.0;
  int n_unpadded = 0;
};

void pool_and_normalize(const Mat& out, PooledEmbedding& e) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(out.cols());
  int n = 0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (e.seq.attention_mask[static_cast<size_t>(i)]) {
      sum += out.row(i).transpose();
      ++n;
    }
  }
  e.mean = sum / static_cast<double>(n);
  e.norm = e.mean.norm();
  if (e.norm == 0.0) {
    throw std::runtime_error("embedding collapsed to the zero vector");
  }
  e.unit = e.mean / e.norm;
  e.n_unpadded = n;
}

/// Forward one text through a tower; cache kept only when needs_grad.
PooledEmbedding tower_embed(const EncoderWeights& encoder, const Vocabulary& vocab,
                            const std::string& text, int max_len, bool lowercase,
                            bool needs_grad, bool train_mode, Rng* dropout_rng) {
  PooledEmbedding e;
  e.seq = encode(text, vocab, max_len, lowercase);
  if (needs_grad) {
    const Mat out = internal::encoder_forward_cached(
        encoder, e.seq.ids, e.seq.attention_mask, nullptr, train_mode,
        dropout_rng, e.pass);
    pool_and_normalize(out, e);
  } else {
    const Mat out = encoder_forward(encoder, e.seq, nullptr, train_mode,
                                    dropout_rng);
    pool_and_normalize(out, e);
  }
  return e;
}

/// d(loss)/d(mean) given d(loss)/d(unit), through u = mean / |mean|.
Eigen::VectorXd normalize_backward(const PooledEmbedding& e,
                                   const Eigen::VectorXd& dunit) {
  return (dunit - e.unit * e.unit.dot(dunit)) / e.norm;
}

/// Scatter d(loss)/d(mean) back to the unpadded encoder output rows.
Mat pool_backward(const PooledEmbedding& e, const Eigen::VectorXd& dmean) {
  Mat dout = Mat::Zero(static_cast<Eigen::Index>(e.seq.ids.size()),
                       dmean.size());
  const Eigen::RowVectorXd row =
      dmean.transpose() / static_cast<double>(e.n_unpadded);
  for (Eigen::Index i = 0; i < dout.rows(); ++i) {
    if (e.seq.attention_mask[static_cast<size_t>(i)]) dout.row(i) = row;
  }
  return dout;
}

/// In-batch softmax loss over cosine/temperature logits; query -> own code.
/// Gradients are accumulated when the grad sets are non-null.
double mem_batch_pass(const MemModel& model,
                      const std::vector<QueryCodePair>& batch, double temperature,
                      EncoderWeights* query_grads, EncoderWeights* code_grads,
                      bool train_mode, uint64_t dropout_seed, unsigned threads) {
  const size_t B = batch.size();
  if (B < 2) {
    throw std::invalid_argument("in-batch softmax needs at least two pairs");
  }
  if (temperature <= 0.0) {
    throw std::invalid_argument("loss temperature must be positive");
  }
  const bool needs_grad = query_grads != nullptr;

  std::vector<PooledEmbedding> q(B), c(B);
  parallel_chunks(B, threads, [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      Rng qrng(mix_seed(dropout_seed, 2 * i));
      Rng crng(mix_seed(dropout_seed, 2 * i + 1));
      q[i] = tower_embed(model.query_encoder, model.query_vocab, batch[i].query,
                         model.max_len_query, true, needs_grad, train_mode,
                         train_mode ? &qrng : nullptr);
      c[i] = tower_embed(model.code_encoder, model.code_vocab, batch[i].code,
                         model.max_len_code, false, needs_grad, train_mode,
                         train_mode ? &crng : nullptr);
    }
  });

  Mat logits(B, B);
  for (size_t i = 0; i < B; ++i) {
    for (size_t j = 0; j < B; ++j) {
      logits(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          q[i].unit.dot(c[j].unit) / temperature;
    }
  }

  double loss = 0.0;
  Mat dlogits(B, B);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(B); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    loss += lse - logits(i, i);
    if (needs_grad) {
      dlogits.row(i) = (logits.row(i).array() - lse).exp();
      dlogits(i, i) -= 1.0;
    }
  }
  loss /= static_cast<double>(B);

  if (!needs_grad) return loss;
  dlogits /= static_cast<double>(B) * temperature;

  std::vector<EncoderWeights> q_shards, c_shards;
  std::mutex merge_mutex;
  parallel_chunks(B, threads, [&](size_t begin, size_t end) {
    EncoderWeights local_q = query_grads->zeros_like();
    EncoderWeights local_c = code_grads->zeros_like();
    for (size_t i = begin; i < end; ++i) {
      Eigen::VectorXd dq_unit = Eigen::VectorXd::Zero(model.d());
      Eigen::VectorXd dc_unit = Eigen::VectorXd::Zero(model.d());
      for (size_t j = 0; j < B; ++j) {
        dq_unit += dlogits(static_cast<Eigen::Index>(i),
                           static_cast<Eigen::Index>(j)) *
                   c[j].unit;
        dc_unit += dlogits(static_cast<Eigen::Index>(j),
                           static_cast<Eigen::Index>(i)) *
                   q[j].unit;
      }
      internal::encoder_backward_cached(
          model.query_encoder, q[i].pass,
          pool_backward(q[i], normalize_backward(q[i], dq_unit)), local_q);
      internal::encoder_backward_cached(
          model.code_encoder, c[i].pass,
          pool_backward(c[i], normalize_backward(c[i], dc_unit)), local_c);
    }
    std::lock_guard<std::mutex> lock(merge_mutex);
    q_shards.push_back(std::move(local_q));
    c_shards.push_back(std::move(local_c));
  });

  auto merge = [](EncoderWeights& into, const std::vector<EncoderWeights>& shards) {
    for (const auto& shard : shards) {
      std::vector<const Mat*> src;
      shard.visit([&src](const std::string&, const Mat& m) { src.push_back(&m); });
      size_t idx = 0;
      into.visit([&](const std::string&, Mat& m) { m += *src[idx++]; });
    }
  };
  merge(*query_grads, q_shards);
  merge(*code_grads, c_shards);
  return loss;
}

}  // namespace

Eigen::VectorXd embed_query(const MemModel& model, const std::string& text) {
  return tower_embed(model.query_encoder, model.query_vocab, text,
                     model.max_len_query, true, false, false, nullptr)
      .unit;
}

Eigen::VectorXd embed_code(const MemModel& model, const std::string& text) {
  return tower_embed(model.code_encoder, model.code_vocab, text,
                     model.max_len_code, false, false, false, nullptr)
      .unit;
}

double similarity(const Eigen::VectorXd& q, const Eigen::VectorXd& c) {
  const double qn = q.norm();
  const double cn = c.norm();
  if (qn == 0.0 || cn == 0.0) {
    throw std::invalid_argument("similarity of a zero vector is undefined");
  }
  return q.dot(c) / (qn * cn);
}

double finetune_batch_loss(const MemModel& model,
                           const std::vector<QueryCodePair>& batch,
                           double temperature) {
  return mem_batch_pass(model, batch, temperature, nullptr, nullptr, false, 0, 1);
}

double finetune_batch_loss_grad(const MemModel& model,
                                const std::vector<QueryCodePair>& batch,
                                double temperature, EncoderWeights& query_grads,
                                EncoderWeights& code_grads) {
  return mem_batch_pass(model, batch, temperature, &query_grads, &code_grads,
                        false, 0, 1);
}

namespace {

/// MRR of each validation query against all validation codes.
double validation_mrr(const MemModel& model,
                      const std::vector<QueryCodePair>& val, unsigned threads) {
  if (val.empty()) return 0.0;
  const auto n = val.size();
  Mat codes(n, model.d());
  Mat queries(n, model.d());
  parallel_chunks(n, threads, [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      codes.row(static_cast<Eigen::Index>(i)) =
          embed_code(model, val[i].code).transpose();
      queries.row(static_cast<Eigen::Index>(i)) =
          embed_query(model, val[i].query).transpose();
    }
  });
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd scores =
        codes * queries.row(static_cast<Eigen::Index>(i)).transpose();
    const double own = scores(static_cast<Eigen::Index>(i));
    // Ties resolve by ascending pair id, matching ranked-result ordering.
    int64_t rank = 1;
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s = scores(static_cast<Eigen::Index>(j));
      if (s > own || (s == own && val[j].id < val[i].id)) ++rank;
    }
    sum += 1.0 / static_cast<double>(rank);
  }
  return sum / static_cast<double>(n);
}

}  // namespace

FinetuneResult finetune(MemModel model, const std::vector<QueryCodePair>& train,
                        const std::vector<QueryCodePair>& val,
                        const FinetuneConfig& config) {
  config.validate();
  if (train.size() < 2) {
    throw std::invalid_argument("finetune: need at least two training pairs");
  }
  model.max_len_query = config.max_len_query;
  model.max_len_code = config.max_len_code;
  model.temperature = config.loss_temperature;
  model.query_encoder.config.dropout_p = config.dropout;
  model.code_encoder.config.dropout_p = config.dropout;
  model.validate();

  Optimizer q_opt(config.optimizer, model.query_encoder, config.momentum, 0.999,
                  config.weight_decay);
  Optimizer c_opt(config.optimizer, model.code_encoder, config.momentum, 0.999,
                  config.weight_decay);

  FinetuneResult result;
  result.val_mrr.push_back(validation_mrr(model, val, config.threads));
  result.model = model;
  double best = result.val_mrr.front();

  EncoderWeights q_grads = model.query_encoder.zeros_like();
  EncoderWeights c_grads = model.code_encoder.zeros_like();

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr =
        config.learning_rate * std::pow(config.lr_decay, epoch - 1);
    Rng shuffle_rng(mix_seed(config.seed, 0xE9, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    int64_t step = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      if (end - start < 2) break;  // a lone pair has no in-batch negatives
      std::vector<QueryCodePair> batch;
      batch.reserve(end - start);
      for (size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);

      ++step;
      q_grads.visit([](const std::string&, Mat& m) { m.setZero(); });
      c_grads.visit([](const std::string&, Mat& m) { m.setZero(); });
      const double loss = mem_batch_pass(
          model, batch, config.loss_temperature, &q_grads, &c_grads,
          config.dropout > 0.0,
          mix_seed(mix_seed(config.seed, static_cast<uint64_t>(epoch)),
                   static_cast<uint64_t>(step)),
          config.threads);
      if (!std::isfinite(loss)) {
        throw std::runtime_error(
            "fine-tuning diverged at epoch " + std::to_string(epoch) +
            " step " + std::to_string(step) + " (batch of " +
            std::to_string(batch.size()) + ")");
      }
      q_opt.step(model.query_encoder, q_grads, lr);
      c_opt.step(model.code_encoder, c_grads, lr);
    }

    const double mrr = validation_mrr(model, val, config.threads);
    result.val_mrr.push_back(mrr);
    // With no validation set every epoch "improves": keep the final model.
    if (val.empty() || mrr > best) {
      best = mrr;
      result.model = model;
    }
  }
  return result;
}

EmbeddingIndex build_embedding_index(
    const MemModel& model, const std::vector<std::pair<DocId, std::string>>& docs,
    unsigned threads) {
  std::unordered_set<DocId> seen;
  for (const auto& [id, text] : docs) {
    if (!seen.insert(id).second) {
      throw std::invalid_argument("duplicate doc id in embedding index: " +
                                  std::to_string(id));
    }
  }
  EmbeddingIndex index;
  index.doc_ids.reserve(docs.size());
  for (const auto& [id, text] : docs) index.doc_ids.push_back(id);
  index.vectors.resize(static_cast<Eigen::Index>(docs.size()), model.d());
  parallel_chunks(docs.size(), threads, [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      index.vectors.row(static_cast<Eigen::Index>(i)) =
          embed_code(model, docs[i].second).transpose();
    }
  });
  return index;
}

RankedResults search_embeddings(const EmbeddingIndex& index, const MemModel& model,
                                const std::string& query, size_t limit) {
  const Eigen::VectorXd u = embed_query(model, query);
  const Eigen::VectorXd scores = index.vectors * u;
  RankedResults results;
  results.entries.reserve(index.size());
  for (size_t i = 0; i < index.size(); ++i) {
    results.entries.push_back(
        {index.doc_ids[i], scores(static_cast<Eigen::Index>(i))});
  }
  sort_ranked(results.entries);
  if (results.entries.size() > limit) results.entries.resize(limit);
  return results;
}

RankedResults rank_embedding_subset(const EmbeddingIndex& index,
                                    const Eigen::VectorXd& query_vec,
                                    const std::vector<DocId>& pool,
                                    size_t limit) {
  std::unordered_map<DocId, size_t> row_of;
  row_of.reserve(index.size());
  for (size_t i = 0; i < index.size(); ++i) row_of.emplace(index.doc_ids[i], i);

  RankedResults results;
  results.entries.reserve(pool.size());
  for (DocId id : pool) {
    auto it = row_of.find(id);
    if (it == row_of.end()) {
      throw std::invalid_argument("pool doc not in embedding index: " +
                                  std::to_string(id));
    }
    const double score =
        index.vectors.row(static_cast<Eigen::Index>(it->second)).dot(query_vec);
    results.entries.push_back({id, score});
  }
  sort_ranked(results.entries);
  if (results.entries.size() > limit) results.entries.resize(limit);
  return results;
}

namespace {

constexpr uint32_t kEmbeddingMagic = 0x4353454d;  // "CSEM"
constexpr uint32_t kEmbeddingVersion = 1;

}  // namespace

void save_embedding_index(const EmbeddingIndex& index, const std::string& path) {
  if (index.doc_ids.size() != static_cast<size_t>(index.vectors.rows())) {
    throw std::invalid_argument("embedding index: id/vector count mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  binio::write_u32(out, kEmbeddingMagic);
  binio::write_u32(out, kEmbeddingVersion);
  binio::write_u64(out, index.doc_ids.size());
  binio::write_u32(out, static_cast<uint32_t>(index.vectors.cols()));
  for (DocId id : index.doc_ids) {
    binio::write_u64(out, static_cast<uint64_t>(id));
  }
  for (Eigen::Index i = 0; i < index.vectors.rows(); ++i) {
    for (Eigen::Index j = 0; j < index.vectors.cols(); ++j) {
      binio::write_f32(out, static_cast<float>(index.vectors(i, j)));
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

EmbeddingIndex load_embedding_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  if (binio::read_u32(in) != kEmbeddingMagic) {
    throw std::runtime_error("not an embedding index: " + path);
  }
  const uint32_t version = binio::read_u32(in);
  if (version != kEmbeddingVersion) {
    throw std::runtime_error("unsupported embedding index version " +
                             std::to_string(version));
  }
  const uint64_t n = binio::read_u64(in);
  const uint32_t d = binio::read_u32(in);
  EmbeddingIndex index;
  index.doc_ids.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    index.doc_ids.push_back(static_cast<DocId>(binio::read_u64(in)));
  }
  index.vectors.resize(static_cast<Eigen::Index>(n),
                       static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < index.vectors.rows(); ++i) {
    for (Eigen::Index j = 0; j < index.vectors.cols(); ++j) {
      index.vectors(i, j) = static_cast<double>(binio::read_f32(in));
    }
  }
  return index;
}

void save_mem_model(const MemModel& model, const std::string& dir) {
  model.validate();
  std::filesystem::create_directories(dir);
  const uint64_t q_hash = model.query_vocab.content_hash();
  const uint64_t c_hash = model.code_vocab.content_hash();
  save_encoder_checkpoint(model.query_encoder, q_hash, dir + "/query.ckpt");
  save_encoder_checkpoint(model.code_encoder, c_hash, dir + "/code.ckpt");
  save_vocabulary(model.query_vocab, dir + "/query.vocab");
  save_vocabulary(model.code_vocab, dir + "/code.vocab");

  nlohmann::json manifest{
      {"d", model.d()},
      {"pooling", "mean_over_unpadded"},
      {"temperature", model.temperature},
      {"max_len_query", model.max_len_query},
      {"max_len_code", model.max_len_code},
      {"query_pretrain", to_string(model.provenance.q_pretrain)},
      {"code_pretrain", to_string(model.provenance.c_pretrain)},
      {"query_vocab_hash", to_hex(q_hash)},
      {"code_vocab_hash", to_hex(c_hash)},
  };
  std::ofstream out(dir + "/manifest.json");
  if (!out) throw std::runtime_error("cannot open for writing: " + dir +
                                     "/manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + dir + "/manifest.json");
}

MemModel load_mem_model(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) throw std::runtime_error("cannot open: " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad model manifest in " + dir + ": " + e.what());
  }
  if (manifest.at("pooling").get<std::string>() != "mean_over_unpadded") {
    throw std::runtime_error("unknown pooling in model manifest: " +
                             manifest.at("pooling").get<std::string>());
  }

  MemModel model;
  model.query_vocab = load_vocabulary(dir + "/query.vocab");
  model.code_vocab = load_vocabulary(dir + "/code.vocab");
  if (to_hex(model.query_vocab.content_hash()) !=
          manifest.at("query_vocab_hash").get<std::string>() ||
      to_hex(model.code_vocab.content_hash()) !=
          manifest.at("code_vocab_hash").get<std::string>()) {
    throw std::runtime_error("vocabulary hash mismatch in " + dir);
  }

  LoadedEncoder q = load_encoder_checkpoint(dir + "/query.ckpt");
  LoadedEncoder c = load_encoder_checkpoint(dir + "/code.ckpt");
  if (q.vocab_hash != model.query_vocab.content_hash() ||
      c.vocab_hash != model.code_vocab.content_hash()) {
    throw std::runtime_error("checkpoint was built against a different "
                             "vocabulary: " + dir);
  }
  model.query_encoder = std::move(q.weights);
  model.code_encoder = std::move(c.weights);
  model.max_len_query = manifest.at("max_len_query").get<int>();
  model.max_len_code = manifest.at("max_len_code").get<int>();
  model.temperature = manifest.at("temperature").get<double>();
  model.provenance.q_pretrain = query_pretrain_from_string(
      manifest.at("query_pretrain").get<std::string>());
  model.provenance.c_pretrain = code_pretrain_from_string(
      manifest.at("code_pretrain").get<std::string>());
  model.validate();
  return model;
}

}  // namespace codesearch
