#include "codesearch/pipeline.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace codesearch {

void CombinedModel::validate() const {
  if (!ir || !mem || !embeddings) {
    throw std::invalid_argument("combined model: all stages must be present");
  }
  if (prefilter_limit == 0) {
    throw std::invalid_argument("combined model: prefilter limit must be positive");
  }
  if (static_cast<size_t>(ir->doc_count()) != embeddings->size()) {
    throw std::invalid_argument("combined model: stage indexes disagree on size");
  }
  for (DocId id : embeddings->doc_ids) {
    if (!ir->doc_lengths.count(id)) {
      throw std::invalid_argument("combined model: doc " + std::to_string(id) +
                                  " is embedded but not in the keyword index");
    }
  }
}

RankedResults combined_search(const CombinedModel& cm, const std::string& query,
                              IrScorer scorer) {
  cm.validate();
  const RankedResults stage1 = search_ir(*cm.ir, query, cm.prefilter_limit, scorer);
  if (stage1.empty()) return {};
  std::vector<DocId> pool;
  pool.reserve(stage1.size());
  for (const auto& e : stage1.entries) pool.push_back(e.doc_id);
  const Eigen::VectorXd q = embed_query(*cm.mem, query);
  return rank_embedding_subset(*cm.embeddings, q, pool, pool.size());
}

namespace {

const std::unordered_set<std::string>& train_tags() {
  static const std::unordered_set<std::string> tags{"NO", "JS", "JA",
                                                    "PY", "TP", "AL"};
  return tags;
}

const std::unordered_set<std::string>& test_tags() {
  static const std::unordered_set<std::string> tags{"JS", "JA", "PY", "TP"};
  return tags;
}

[[noreturn]] void bad_name(const std::string& text) {
  throw std::invalid_argument("malformed experiment name: " + text);
}

}  // namespace

std::string render_experiment_name(const ExperimentName& name) {
  if (!test_tags().count(name.test)) {
    throw std::invalid_argument("experiment name: unknown test corpus '" +
                                name.test + "'");
  }
  if (name.ir_only) return "LU-(" + name.test + ")";
  if (!train_tags().count(name.train)) {
    throw std::invalid_argument("experiment name: unknown training corpus '" +
                                name.train + "'");
  }
  const std::string base = to_string(name.q_pretrain) + "-" +
                           to_string(name.c_pretrain) + "-[" + name.train +
                           "]-(" + name.test + ")";
  return name.combined ? "LU+" + base : base;
}

ExperimentName parse_experiment_name(const std::string& text) {
  ExperimentName name;
  std::string rest = text;

  if (rest.rfind("LU-(", 0) == 0) {
    if (rest.size() < 5 || rest.back() != ')') bad_name(text);
    name.ir_only = true;
    name.test = rest.substr(4, rest.size() - 5);
    if (!test_tags().count(name.test)) bad_name(text);
    return name;
  }
  if (rest.rfind("LU+", 0) == 0) {
    name.combined = true;
    rest = rest.substr(3);
  }

  // {E_q}-{E_c}-[train]-(test)
  const size_t dash1 = rest.find('-');
  if (dash1 == std::string::npos) bad_name(text);
  const size_t dash2 = rest.find("-[", dash1 + 1);
  if (dash2 == std::string::npos) bad_name(text);
  const size_t close = rest.find("]-(", dash2 + 2);
  if (close == std::string::npos || rest.back() != ')') bad_name(text);

  try {
    name.q_pretrain = query_pretrain_from_string(rest.substr(0, dash1));
    name.c_pretrain =
        code_pretrain_from_string(rest.substr(dash1 + 1, dash2 - dash1 - 1));
  } catch (const std::invalid_argument&) {
    bad_name(text);
  }
  name.train = rest.substr(dash2 + 2, close - dash2 - 2);
  name.test = rest.substr(close + 3, rest.size() - close - 4);
  if (!train_tags().count(name.train) || !test_tags().count(name.test)) {
    bad_name(text);
  }
  return name;
}

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::random: return "random";
    case ModelVariant::zero_shot: return "zero_shot";
    case ModelVariant::no_pretrain: return "no_pretrain";
    case ModelVariant::mem: return "mem";
    case ModelVariant::ir: return "ir";
    case ModelVariant::combined: return "combined";
  }
  throw std::logic_error("unreachable");
}

ModelVariant variant_of(const ExperimentName& name) {
  if (name.ir_only) return ModelVariant::ir;
  if (name.combined) return ModelVariant::combined;
  const bool pretrained = name.q_pretrain != QueryPretrain::none ||
                          name.c_pretrain != CodePretrain::none;
  if (name.train == "NO") {
    return pretrained ? ModelVariant::zero_shot : ModelVariant::random;
  }
  return pretrained ? ModelVariant::mem : ModelVariant::no_pretrain;
}

void IrBackend::prepare(const std::vector<EvalDoc>& corpus) {
  std::vector<std::pair<DocId, std::string>> docs;
  docs.reserve(corpus.size());
  for (const auto& d : corpus) docs.emplace_back(d.id, d.code);
  index_ = build_index(docs);
}

RankedResults IrBackend::rank(const std::string& query,
                              const std::vector<DocId>& pool) const {
  // Score against the whole index, then restrict. Per-document scores do not
  // depend on what else is in the pool, so the restriction preserves order;
  // pool docs sharing no query term stay unranked.
  RankedResults full = search_ir(index_, query,
                                 static_cast<size_t>(index_.doc_count()),
                                 scorer_);
  std::unordered_set<DocId> keep(pool.begin(), pool.end());
  RankedResults out;
  out.query_id = full.query_id;
  for (const auto& e : full.entries) {
    if (keep.count(e.doc_id)) out.entries.push_back(e);
  }
  return out;
}

void MemBackend::prepare(const std::vector<EvalDoc>& corpus) {
  std::vector<std::pair<DocId, std::string>> docs;
  docs.reserve(corpus.size());
  for (const auto& d : corpus) docs.emplace_back(d.id, d.code);
  index_ = build_embedding_index(model_, docs, threads_);
}

RankedResults MemBackend::rank(const std::string& query,
                               const std::vector<DocId>& pool) const {
  const Eigen::VectorXd q = embed_query(model_, query);
  return rank_embedding_subset(index_, q, pool, pool.size());
}

void CombinedBackend::prepare(const std::vector<EvalDoc>& corpus) {
  ir_.prepare(corpus);
  mem_.prepare(corpus);
}

RankedResults CombinedBackend::rank(const std::string& query,
                                    const std::vector<DocId>& pool) const {
  RankedResults stage1 = ir_.rank(query, pool);
  if (stage1.entries.size() > prefilter_limit_) {
    stage1.entries.resize(prefilter_limit_);
  }
  if (stage1.empty()) return {};
  std::vector<DocId> candidates;
  candidates.reserve(stage1.size());
  for (const auto& e : stage1.entries) candidates.push_back(e.doc_id);
  const Eigen::VectorXd q = embed_query(mem_.model(), query);
  return rank_embedding_subset(mem_.index(), q, candidates, candidates.size());
}

namespace {

/// One tower's starting point: a pre-trained artifact, or fresh random
/// weights over a vocabulary trained on this fold's training texts.
struct TowerInit {
  EncoderWeights weights;
  Vocabulary vocab;
};

TowerInit fresh_tower(const ExperimentSpec& spec, int fold_id, bool is_query,
                      const std::vector<QueryCodePair>& train) {
  std::vector<std::string> texts;
  texts.reserve(train.size());
  for (const auto& p : train) texts.push_back(is_query ? p.query : p.code);
  VocabTrainOptions vopts;
  vopts.vocab_size = static_cast<size_t>(spec.fresh_config.vocab_size);
  vopts.lowercase = is_query;
  TowerInit t;
  t.vocab = train_vocab(texts, vopts);
  EncoderConfig config = spec.fresh_config;
  config.vocab_size = static_cast<int>(t.vocab.size());
  t.weights = init_weights(
      config, mix_seed(spec.seed, static_cast<uint64_t>(fold_id),
                       is_query ? 1 : 2));
  return t;
}

MemModel assemble_model(const ExperimentSpec& spec, const ModelStore& store,
                        int fold_id, const std::vector<QueryCodePair>& train) {
  MemModel model;
  if (spec.name.q_pretrain == QueryPretrain::english) {
    if (!store.english_query) {
      throw std::invalid_argument(
          "experiment needs the English query model, but none was provided");
    }
    model.query_encoder = store.english_query->weights;
    model.query_vocab = store.english_query->vocab;
  } else {
    TowerInit t = fresh_tower(spec, fold_id, true, train);
    model.query_encoder = std::move(t.weights);
    model.query_vocab = std::move(t.vocab);
  }
  if (spec.name.c_pretrain != CodePretrain::none) {
    auto it = store.code_models.find(spec.name.c_pretrain);
    if (it == store.code_models.end()) {
      throw std::invalid_argument(
          "experiment needs a pre-trained code model for " +
          to_string(spec.name.c_pretrain) + ", but none was provided");
    }
    model.code_encoder = it->second.weights;
    model.code_vocab = it->second.vocab;
  } else {
    TowerInit t = fresh_tower(spec, fold_id, false, train);
    model.code_encoder = std::move(t.weights);
    model.code_vocab = std::move(t.vocab);
  }
  model.max_len_query = spec.finetune.max_len_query;
  model.max_len_code = spec.finetune.max_len_code;
  model.temperature = spec.finetune.loss_temperature;
  model.provenance = {spec.name.q_pretrain, spec.name.c_pretrain};
  model.validate();
  return model;
}

}  // namespace

CrossValidationResult run_experiment(const ExperimentSpec& spec,
                                     const std::vector<QueryCodePair>& pairs,
                                     const FoldPlan& plan,
                                     const ModelStore& store) {
  const ModelVariant denoted = variant_of(spec.name);
  if (spec.variant != denoted) {
    throw std::invalid_argument("experiment name " +
                                render_experiment_name(spec.name) +
                                " denotes variant " + to_string(denoted) +
                                ", but the spec says " + to_string(spec.variant));
  }
  if (spec.variant == ModelVariant::combined &&
      spec.strategy.kind == EvalKind::eval_1k) {
    throw std::invalid_argument(
        "the combined pipeline evaluates on the full split only");
  }

  EvaluateOptions options;
  options.aroma_on = spec.aroma_on;
  options.model_name = render_experiment_name(spec.name);
  options.threads = spec.threads;

  BackendFactory factory = [&spec, &store](
                               int fold_id,
                               const std::vector<QueryCodePair>& train,
                               const std::vector<QueryCodePair>& val)
      -> std::unique_ptr<SearchBackend> {
    if (spec.variant == ModelVariant::ir) {
      return std::make_unique<IrBackend>(spec.ir_scorer);
    }

    MemModel model = assemble_model(spec, store, fold_id, train);
    const bool needs_finetune = spec.name.train != "NO";
    if (needs_finetune) {
      FinetuneConfig fc = spec.finetune;
      fc.seed = mix_seed(spec.seed, static_cast<uint64_t>(fold_id));
      fc.threads = spec.threads;
      FinetuneResult trained = finetune(std::move(model), train, val, fc);
      model = std::move(trained.model);
    }

    if (spec.variant == ModelVariant::combined) {
      return std::make_unique<CombinedBackend>(
          std::move(model), spec.prefilter_limit, spec.ir_scorer, spec.threads);
    }
    return std::make_unique<MemBackend>(std::move(model), spec.threads);
  };

  return cross_validate(factory, plan, pairs, spec.strategy, options);
}

}  // namespace codesearch
