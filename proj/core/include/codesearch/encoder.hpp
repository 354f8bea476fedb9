#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "codesearch/corpus.hpp"
#include "codesearch/tokenizer.hpp"
#include "codesearch/util.hpp"

namespace codesearch {

using Mat = Eigen::MatrixXd;

struct EncoderConfig {
  int hidden_size = 768;
  int intermediate_size = 3072;
  int attention_heads = 12;
  int hidden_layers = 12;
  int max_position = 256;
  int vocab_size = 30522;
  double dropout_p = 0.1;

  /// Throws std::invalid_argument on inconsistent values (e.g. hidden size
  /// not divisible by head count).
  void validate() const;
  int head_dim() const { return hidden_size / attention_heads; }
};

struct LayerWeights {
  Mat wq, bq, wk, bk, wv, bv;  // attention projections, d x d and 1 x d
  Mat wo, bo;                  // attention output projection
  Mat attn_ln_gain, attn_ln_bias;
  Mat w1, b1;                  // d x intermediate
  Mat w2, b2;                  // intermediate x d
  Mat ffn_ln_gain, ffn_ln_bias;
};

/// All trainable tensors. visit() enumerates them with stable names so the
/// optimizer, serializer, and gradient checks share one traversal.
struct EncoderWeights {
  EncoderConfig config;
  uint64_t init_seed = 0;

  Mat token_embeddings;     // vocab x d
  Mat position_embeddings;  // max_position x d
  Mat segment_embeddings;   // 2 x d
  Mat emb_ln_gain, emb_ln_bias;
  std::vector<LayerWeights> layers;

  Mat mcm_w, mcm_b;  // d x vocab: masked-token prediction head
  Mat nlp_w, nlp_b;  // d x 2: next-line classification head on [CLS]

  template <typename F>
  void visit(F&& f);
  template <typename F>
  void visit(F&& f) const;

  /// Same shapes, all zeros. Used as a gradient accumulator.
  EncoderWeights zeros_like() const;
  bool all_finite() const;
};

/// Truncated-normal(0.02) matrices, zero biases, unit layer-norm gains.
/// Deterministic in (config, seed).
EncoderWeights init_weights(const EncoderConfig& config, uint64_t seed);

/// Optional per-layer, per-head attention probabilities for inspection.
struct ForwardTrace {
  /// attention[layer][head] is an L x L matrix; row i holds the weights
  /// position i puts on each key.
  std::vector<std::vector<Mat>> attention;
};

/// Returns L x d contextual vectors, L = |seq.ids|. Padded key positions get
/// zero attention weight. segment_ids may be null (all zeros); dropout only
/// applies when train_mode is set and a generator is supplied.
Mat encoder_forward(const EncoderWeights& weights, const TokenSequence& seq,
                    const std::vector<int>* segment_ids = nullptr,
                    bool train_mode = false, Rng* dropout_rng = nullptr,
                    ForwardTrace* trace = nullptr);

/// Masked-token selection: each maskable (non-special) position is chosen
/// independently with probability rate; chosen positions become [MASK] 80%
/// of the time, a random content token 10%, unchanged 10%. labels hold the
/// original id at chosen positions and -1 elsewhere.
struct MaskedTokens {
  std::vector<int> ids;
  std::vector<int> labels;
};
MaskedTokens mask_tokens(const TokenSequence& seq, double rate,
                         int vocab_size, uint64_t seed);

enum class NlpLabel { follows, random };

struct NlpExample {
  std::string line_a;
  std::string line_b;
  NlpLabel label = NlpLabel::follows;
};

/// For each adjacent non-blank line pair of fn: emit the true successor with
/// probability 1/2, otherwise a pool line that is not the true successor.
/// Functions with fewer than two non-blank lines yield nothing.
std::vector<NlpExample> make_nlp_examples(const PretrainFunction& fn,
                                          const std::vector<std::string>& line_pool,
                                          uint64_t seed);

/// One assembled pre-training input: [CLS] A [SEP] B [SEP], masked.
struct PretrainExample {
  std::vector<int> ids;
  std::vector<uint8_t> attention_mask;
  std::vector<int> segment_ids;
  std::vector<int> mcm_labels;  // original id at masked positions, -1 elsewhere
  NlpLabel nlp_label = NlpLabel::follows;
};
using PretrainBatch = std::vector<PretrainExample>;

PretrainExample build_pretrain_example(const NlpExample& example,
                                       const Vocabulary& vocab, int max_seq_len,
                                       double masking_rate, uint64_t seed);

struct PretrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double l2_weight_decay = 0.01;
  int warmup_steps = 1000;
  double masking_rate = 0.15;
  int batch_size = 62;
  int max_seq_len = 256;
  double target_epochs = 40.0;
  uint64_t seed = 0;
  /// Overrides the planner when > 0; used by small-scale runs and tests.
  int64_t max_steps = 0;
  unsigned threads = 1;

  void validate() const;
};

/// Steps that cover target_epochs passes over corpus_tokens at
/// max_seq_len x batch_size tokens per step, rounded up to whole steps.
int64_t plan_pretrain_steps(int64_t corpus_tokens, int max_seq_len,
                            int batch_size, double target_epochs);

struct PretrainStepStats {
  int64_t step = 0;
  double mcm_loss = 0.0;
  double nlp_loss = 0.0;
  double mcm_accuracy = 0.0;
  double nlp_accuracy = 0.0;
};

struct PretrainResult {
  EncoderWeights weights;
  std::vector<PretrainStepStats> history;
};

/// Masked-token + next-line pre-training with Adam, decoupled weight decay,
/// and linear warmup/decay. Throws std::runtime_error naming the step when
/// the loss turns non-finite.
PretrainResult pretrain(EncoderWeights weights,
                        const std::vector<PretrainFunction>& corpus,
                        const Vocabulary& vocab, const PretrainConfig& config);

/// Loss evaluation used by tests and the training loop. Dropout off; the
/// gradient variant fills `grads` (accumulated, caller zeroes).
struct PretrainEval {
  double loss = 0.0;       // mcm_loss + nlp_loss
  double mcm_loss = 0.0;   // mean over masked positions
  double nlp_loss = 0.0;   // mean over examples
  double mcm_accuracy = 0.0;
  double nlp_accuracy = 0.0;
  int64_t mcm_count = 0;
};
PretrainEval pretrain_loss(const EncoderWeights& weights,
                           const PretrainBatch& batch);
PretrainEval pretrain_loss_grad(const EncoderWeights& weights,
                                const PretrainBatch& batch,
                                EncoderWeights& grads);

/// Adam / LAMB over the visit() traversal. Decoupled weight decay skips
/// biases and layer-norm tensors.
enum class OptimizerKind { adam, lamb };

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const EncoderWeights& shape, double beta1,
            double beta2, double weight_decay, double epsilon = 1e-8);
  void step(EncoderWeights& weights, const EncoderWeights& grads, double lr);
  int64_t steps_taken() const { return t_; }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, weight_decay_, epsilon_;
  int64_t t_ = 0;
  EncoderWeights m_, v_;
};

/// Linear warmup to peak lr, then linear decay to zero at total_steps.
double lr_at_step(double peak_lr, int64_t step, int64_t warmup_steps,
                  int64_t total_steps);

/// Keeps the lowest `target_layers` layers (and all embeddings/heads) of a
/// deeper encoder; head count may change because per-head splitting is a
/// view over the same d x d projections.
EncoderWeights adapt_layers(const EncoderWeights& pretrained, int target_layers,
                            int target_heads);

/// Versioned binary checkpoint: header (format version, config, vocabulary
/// hash, seed) then named tensors as little-endian float32. Loading
/// validates every shape.
void save_encoder_checkpoint(const EncoderWeights& weights, uint64_t vocab_hash,
                             const std::string& path);
struct LoadedEncoder {
  EncoderWeights weights;
  uint64_t vocab_hash = 0;
};
LoadedEncoder load_encoder_checkpoint(const std::string& path);

// --- template definitions ---

namespace detail {
template <typename W, typename F>
void visit_weights(W& w, F&& f) {
  f("token_embeddings", w.token_embeddings);
  f("position_embeddings", w.position_embeddings);
  f("segment_embeddings", w.segment_embeddings);
  f("emb_ln_gain", w.emb_ln_gain);
  f("emb_ln_bias", w.emb_ln_bias);
  for (size_t i = 0; i < w.layers.size(); ++i) {
    auto& l = w.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    f(p + "wq", l.wq); f(p + "bq", l.bq);
    f(p + "wk", l.wk); f(p + "bk", l.bk);
    f(p + "wv", l.wv); f(p + "bv", l.bv);
    f(p + "wo", l.wo); f(p + "bo", l.bo);
    f(p + "attn_ln_gain", l.attn_ln_gain);
    f(p + "attn_ln_bias", l.attn_ln_bias);
    f(p + "w1", l.w1); f(p + "b1", l.b1);
    f(p + "w2", l.w2); f(p + "b2", l.b2);
    f(p + "ffn_ln_gain", l.ffn_ln_gain);
    f(p + "ffn_ln_bias", l.ffn_ln_bias);
  }
  f("mcm_w", w.mcm_w);
  f("mcm_b", w.mcm_b);
  f("nlp_w", w.nlp_w);
  f("nlp_b", w.nlp_b);
}
}  // namespace detail

template <typename F>
void EncoderWeights::visit(F&& f) {
  detail::visit_weights(*this, std::forward<F>(f));
}
template <typename F>
void EncoderWeights::visit(F&& f) const {
  detail::visit_weights(*this, std::forward<F>(f));
}

}  // namespace codesearch
