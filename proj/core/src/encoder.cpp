#include "codesearch/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "binio.hpp"
#include "encoder_internal.hpp"

namespace codesearch {

void EncoderConfig::validate() const {
  if (hidden_size <= 0 || intermediate_size <= 0 || attention_heads <= 0 ||
      hidden_layers <= 0 || max_position <= 0 || vocab_size <= 0) {
    throw std::invalid_argument("encoder config: sizes must be positive");
  }
  if (hidden_size % attention_heads != 0) {
    throw std::invalid_argument(
        "encoder config: hidden size " + std::to_string(hidden_size) +
        " not divisible by " + std::to_string(attention_heads) + " heads");
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw std::invalid_argument("encoder config: dropout must be in [0, 1)");
  }
}

void PretrainConfig::validate() const {
  if (masking_rate <= 0.0 || masking_rate >= 1.0) {
    throw std::invalid_argument("pretrain config: masking rate must be in (0,1)");
  }
  if (batch_size < 1) throw std::invalid_argument("pretrain config: batch size");
  if (max_seq_len < 4) {
    throw std::invalid_argument("pretrain config: sequence length too small");
  }
  if (learning_rate <= 0.0) throw std::invalid_argument("pretrain config: lr");
  if (target_epochs <= 0.0 && max_steps <= 0) {
    throw std::invalid_argument("pretrain config: no step budget");
  }
}

EncoderWeights EncoderWeights::zeros_like() const {
  EncoderWeights z = *this;
  z.visit([](const std::string&, Mat& m) { m.setZero(); });
  return z;
}

bool EncoderWeights::all_finite() const {
  bool ok = true;
  visit([&ok](const std::string&, const Mat& m) {
    if (!m.allFinite()) ok = false;
  });
  return ok;
}

EncoderWeights init_weights(const EncoderConfig& config, uint64_t seed) {
  config.validate();
  EncoderWeights w;
  w.config = config;
  w.init_seed = seed;
  const int d = config.hidden_size;
  const int inter = config.intermediate_size;

  w.token_embeddings.resize(config.vocab_size, d);
  w.position_embeddings.resize(config.max_position, d);
  w.segment_embeddings.resize(2, d);
  w.emb_ln_gain = Mat::Ones(1, d);
  w.emb_ln_bias = Mat::Zero(1, d);
  w.layers.resize(static_cast<size_t>(config.hidden_layers));
  for (auto& l : w.layers) {
    l.wq.resize(d, d); l.bq = Mat::Zero(1, d);
    l.wk.resize(d, d); l.bk = Mat::Zero(1, d);
    l.wv.resize(d, d); l.bv = Mat::Zero(1, d);
    l.wo.resize(d, d); l.bo = Mat::Zero(1, d);
    l.attn_ln_gain = Mat::Ones(1, d);
    l.attn_ln_bias = Mat::Zero(1, d);
    l.w1.resize(d, inter); l.b1 = Mat::Zero(1, inter);
    l.w2.resize(inter, d); l.b2 = Mat::Zero(1, d);
    l.ffn_ln_gain = Mat::Ones(1, d);
    l.ffn_ln_bias = Mat::Zero(1, d);
  }
  w.mcm_w.resize(d, config.vocab_size);
  w.mcm_b = Mat::Zero(1, config.vocab_size);
  w.nlp_w.resize(d, 2);
  w.nlp_b = Mat::Zero(1, 2);

  // Truncated normal for everything with more than one row; biases and
  // layer-norm tensors keep their zero/one fill from above.
  Rng rng(seed);
  w.visit([&rng](const std::string&, Mat& m) {
    if (m.rows() <= 1) return;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = rng.truncated_normal(0.02);
      }
    }
  });
  return w;
}

namespace internal {
namespace {

constexpr double kLnEpsilon = 1e-12;
constexpr double kMaskedScore = -1e30;

}  // namespace

struct LnCache {
  Mat xhat;                 // L x d
  Eigen::VectorXd inv_std;  // L
};

Mat layer_norm_forward(const Mat& x, const Mat& gain, const Mat& bias,
                       LnCache* cache) {
  const auto d = static_cast<double>(x.cols());
  Mat out(x.rows(), x.cols());
  Mat xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().sum() / d;
    const double inv = 1.0 / std::sqrt(var + kLnEpsilon);
    xhat.row(i) = (x.row(i).array() - mean) * inv;
    out.row(i) = xhat.row(i).cwiseProduct(gain.row(0)) + bias.row(0);
    inv_std(i) = inv;
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Mat layer_norm_backward(const Mat& dy, const LnCache& cache, const Mat& gain,
                        Mat* dgain, Mat* dbias) {
  const auto d = static_cast<double>(dy.cols());
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    dgain->row(0) += dy.row(i).cwiseProduct(cache.xhat.row(i));
    dbias->row(0) += dy.row(i);
    const Eigen::RowVectorXd dxhat = dy.row(i).cwiseProduct(gain.row(0));
    const double mean_dxhat = dxhat.mean();
    const double mean_dxhat_xhat =
        dxhat.cwiseProduct(cache.xhat.row(i)).sum() / d;
    dx.row(i) = cache.inv_std(i) *
                (dxhat.array() - mean_dxhat -
                 cache.xhat.row(i).array() * mean_dxhat_xhat);
  }
  return dx;
}

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

void softmax_rows(Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

/// Inverted-dropout mask: entries are 0 or 1/(1-p).
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat m(rows, cols);
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = rng.uniform_real() < p ? 0.0 : scale;
    }
  }
  return m;
}

struct LayerCache {
  Mat x_in;             // input to the layer (L x d)
  Mat q, k, v;          // projections
  std::vector<Mat> probs;        // per-head L x L attention
  std::vector<Mat> probs_mask;   // per-head dropout masks (may be empty)
  Mat attn_concat;      // heads merged (L x d), pre-output-projection
  Mat attn_drop_mask;   // may be empty
  LnCache ln1;
  Mat r1;               // post-attention LN output
  Mat f1;               // pre-gelu (L x I)
  Mat g;                // gelu(f1)
  Mat ffn_drop_mask;    // may be empty
  LnCache ln2;
};

struct ForwardCache {
  std::vector<int> ids;
  std::vector<uint8_t> mask;
  std::vector<int> seg;
  Mat x0;  // embedding sum, pre-LN
  LnCache emb_ln;
  Mat emb_drop_mask;  // may be empty
  std::vector<LayerCache> layers;
  Mat out;
};

/// Forward pass over one (padded) sequence. With `dropout_rng` set and
/// train mode on, inverted dropout is applied after the embedding LN, on
/// attention probabilities, and after each sublayer projection.
Mat forward_impl(const EncoderWeights& w, const std::vector<int>& ids,
                 const std::vector<uint8_t>& attention_mask,
                 const std::vector<int>* segment_ids, bool train_mode,
                 Rng* dropout_rng, ForwardCache* cache, ForwardTrace* trace) {
  const auto L = static_cast<Eigen::Index>(ids.size());
  const int d = w.config.hidden_size;
  const int heads = w.config.attention_heads;
  const int dh = w.config.head_dim();
  const double p = w.config.dropout_p;
  const bool use_dropout = train_mode && dropout_rng && p > 0.0;

  if (L > w.config.max_position) {
    throw std::invalid_argument("encoder: sequence length " +
                                std::to_string(ids.size()) +
                                " exceeds max position " +
                                std::to_string(w.config.max_position));
  }
  if (attention_mask.size() != ids.size()) {
    throw std::invalid_argument("encoder: attention mask length mismatch");
  }

  Mat x(L, d);
  for (Eigen::Index i = 0; i < L; ++i) {
    const int id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= w.config.vocab_size) {
      throw std::invalid_argument("encoder: token id out of range: " +
                                  std::to_string(id));
    }
    const int seg = segment_ids ? (*segment_ids)[static_cast<size_t>(i)] : 0;
    if (seg < 0 || seg > 1) {
      throw std::invalid_argument("encoder: segment id must be 0 or 1");
    }
    x.row(i) = w.token_embeddings.row(id) + w.position_embeddings.row(i) +
               w.segment_embeddings.row(seg);
  }
  if (cache) {
    cache->ids = ids;
    cache->mask = attention_mask;
    cache->seg = segment_ids ? *segment_ids : std::vector<int>(ids.size(), 0);
    cache->x0 = x;
    cache->layers.resize(w.layers.size());
  }

  x = layer_norm_forward(x, w.emb_ln_gain, w.emb_ln_bias,
                         cache ? &cache->emb_ln : nullptr);
  if (use_dropout) {
    Mat m = dropout_mask(L, d, p, *dropout_rng);
    x = x.cwiseProduct(m);
    if (cache) cache->emb_drop_mask = std::move(m);
  }

  if (trace) trace->attention.assign(w.layers.size(), {});

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (size_t li = 0; li < w.layers.size(); ++li) {
    const auto& l = w.layers[li];
    LayerCache* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->x_in = x;

    Mat q = (x * l.wq).rowwise() + l.bq.row(0);
    Mat k = (x * l.wk).rowwise() + l.bk.row(0);
    Mat v = (x * l.wv).rowwise() + l.bv.row(0);

    Mat concat(L, d);
    std::vector<Mat> probs(static_cast<size_t>(heads));
    std::vector<Mat> prob_masks;
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k.middleCols(h * dh, dh);
      const auto vh = v.middleCols(h * dh, dh);
      Mat s = qh * kh.transpose() * scale;
      for (Eigen::Index j = 0; j < L; ++j) {
        if (!attention_mask[static_cast<size_t>(j)]) {
          s.col(j).setConstant(kMaskedScore);
        }
      }
      softmax_rows(s);
      probs[static_cast<size_t>(h)] = s;
      if (trace) trace->attention[li].push_back(s);
      if (use_dropout) {
        Mat m = dropout_mask(L, L, p, *dropout_rng);
        s = s.cwiseProduct(m);
        prob_masks.push_back(std::move(m));
      }
      concat.middleCols(h * dh, dh) = s * vh;
    }

    Mat attn = (concat * l.wo).rowwise() + l.bo.row(0);
    Mat attn_drop;
    if (use_dropout) {
      attn_drop = dropout_mask(L, d, p, *dropout_rng);
      attn = attn.cwiseProduct(attn_drop);
    }
    Mat r1 = layer_norm_forward(x + attn, l.attn_ln_gain, l.attn_ln_bias,
                                lc ? &lc->ln1 : nullptr);

    Mat f1 = (r1 * l.w1).rowwise() + l.b1.row(0);
    Mat g = f1.unaryExpr([](double v) { return gelu_scalar(v); });
    Mat f2 = (g * l.w2).rowwise() + l.b2.row(0);
    Mat ffn_drop;
    if (use_dropout) {
      ffn_drop = dropout_mask(L, d, p, *dropout_rng);
      f2 = f2.cwiseProduct(ffn_drop);
    }
    Mat out = layer_norm_forward(r1 + f2, l.ffn_ln_gain, l.ffn_ln_bias,
                                 lc ? &lc->ln2 : nullptr);

    if (lc) {
      lc->q = std::move(q);
      lc->k = std::move(k);
      lc->v = std::move(v);
      lc->probs = std::move(probs);
      lc->probs_mask = std::move(prob_masks);
      lc->attn_concat = std::move(concat);
      lc->attn_drop_mask = std::move(attn_drop);
      lc->r1 = r1;
      lc->f1 = std::move(f1);
      lc->g = std::move(g);
      lc->ffn_drop_mask = std::move(ffn_drop);
    }
    x = std::move(out);
  }

  if (cache) cache->out = x;
  return x;
}

/// Backpropagation through forward_impl. `dout` is the gradient at the
/// encoder output; parameter gradients are accumulated into `grads`.
void backward_impl(const EncoderWeights& w, const ForwardCache& cache,
                   Mat dout, EncoderWeights& grads) {
  const int d = w.config.hidden_size;
  const int heads = w.config.attention_heads;
  const int dh = w.config.head_dim();
  const auto L = static_cast<Eigen::Index>(cache.ids.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (size_t li = w.layers.size(); li-- > 0;) {
    const auto& l = w.layers[li];
    const auto& lc = cache.layers[li];
    auto& gl = grads.layers[li];

    // FFN layer norm.
    Mat d_sum = layer_norm_backward(dout, lc.ln2, l.ffn_ln_gain,
                                    &gl.ffn_ln_gain, &gl.ffn_ln_bias);
    Mat dr1 = d_sum;        // residual branch
    Mat df2 = std::move(d_sum);  // ffn branch
    if (lc.ffn_drop_mask.size()) df2 = df2.cwiseProduct(lc.ffn_drop_mask);

    gl.w2 += lc.g.transpose() * df2;
    gl.b2.row(0) += df2.colwise().sum();
    Mat dg = df2 * l.w2.transpose();
    Mat df1 = dg.cwiseProduct(
        lc.f1.unaryExpr([](double v) { return gelu_grad_scalar(v); }));
    gl.w1 += lc.r1.transpose() * df1;
    gl.b1.row(0) += df1.colwise().sum();
    dr1 += df1 * l.w1.transpose();

    // Attention layer norm.
    Mat d_sum1 = layer_norm_backward(dr1, lc.ln1, l.attn_ln_gain,
                                     &gl.attn_ln_gain, &gl.attn_ln_bias);
    Mat dx = d_sum1;          // residual branch
    Mat dattn = std::move(d_sum1);
    if (lc.attn_drop_mask.size()) dattn = dattn.cwiseProduct(lc.attn_drop_mask);

    gl.wo += lc.attn_concat.transpose() * dattn;
    gl.bo.row(0) += dattn.colwise().sum();
    Mat dconcat = dattn * l.wo.transpose();

    Mat dq = Mat::Zero(L, d);
    Mat dk = Mat::Zero(L, d);
    Mat dv = Mat::Zero(L, d);
    for (int h = 0; h < heads; ++h) {
      const auto vh = lc.v.middleCols(h * dh, dh);
      const auto qh = lc.q.middleCols(h * dh, dh);
      const auto kh = lc.k.middleCols(h * dh, dh);
      const Mat& probs = lc.probs[static_cast<size_t>(h)];
      const auto doh = dconcat.middleCols(h * dh, dh);

      // concat_h = dropped_probs * vh
      Mat dropped = probs;
      if (!lc.probs_mask.empty()) {
        dropped = dropped.cwiseProduct(lc.probs_mask[static_cast<size_t>(h)]);
      }
      Mat dprobs_dropped = doh * vh.transpose();
      dv.middleCols(h * dh, dh) += dropped.transpose() * doh;
      if (!lc.probs_mask.empty()) {
        dprobs_dropped =
            dprobs_dropped.cwiseProduct(lc.probs_mask[static_cast<size_t>(h)]);
      }
      // Softmax rows: ds = p .* (dp - rowsum(dp .* p)).
      Mat ds(L, L);
      for (Eigen::Index i = 0; i < L; ++i) {
        const double dot = dprobs_dropped.row(i).cwiseProduct(probs.row(i)).sum();
        ds.row(i) =
            (probs.row(i).array() * (dprobs_dropped.row(i).array() - dot)).matrix();
      }
      ds *= scale;
      dq.middleCols(h * dh, dh) += ds * kh;
      dk.middleCols(h * dh, dh) += ds.transpose() * qh;
    }

    gl.wq += lc.x_in.transpose() * dq;
    gl.bq.row(0) += dq.colwise().sum();
    gl.wk += lc.x_in.transpose() * dk;
    gl.bk.row(0) += dk.colwise().sum();
    gl.wv += lc.x_in.transpose() * dv;
    gl.bv.row(0) += dv.colwise().sum();
    dx += dq * l.wq.transpose() + dk * l.wk.transpose() + dv * l.wv.transpose();

    dout = std::move(dx);
  }

  if (cache.emb_drop_mask.size()) dout = dout.cwiseProduct(cache.emb_drop_mask);
  Mat dx0 = layer_norm_backward(dout, cache.emb_ln, w.emb_ln_gain,
                                &grads.emb_ln_gain, &grads.emb_ln_bias);
  for (Eigen::Index i = 0; i < L; ++i) {
    grads.token_embeddings.row(cache.ids[static_cast<size_t>(i)]) += dx0.row(i);
    grads.position_embeddings.row(i) += dx0.row(i);
    grads.segment_embeddings.row(cache.seg[static_cast<size_t>(i)]) += dx0.row(i);
  }
}

}  // namespace internal

Mat encoder_forward(const EncoderWeights& weights, const TokenSequence& seq,
                    const std::vector<int>* segment_ids, bool train_mode,
                    Rng* dropout_rng, ForwardTrace* trace) {
  return internal::forward_impl(weights, seq.ids, seq.attention_mask,
                                segment_ids, train_mode, dropout_rng, nullptr,
                                trace);
}

namespace internal {

struct EncoderPassImpl {
  ForwardCache cache;
};

EncoderPass::EncoderPass() : impl(std::make_unique<EncoderPassImpl>()) {}
EncoderPass::~EncoderPass() = default;
EncoderPass::EncoderPass(EncoderPass&&) noexcept = default;
EncoderPass& EncoderPass::operator=(EncoderPass&&) noexcept = default;

Mat encoder_forward_cached(const EncoderWeights& w, const std::vector<int>& ids,
                           const std::vector<uint8_t>& mask,
                           const std::vector<int>* segment_ids, bool train_mode,
                           Rng* dropout_rng, EncoderPass& pass) {
  return forward_impl(w, ids, mask, segment_ids, train_mode, dropout_rng,
                      &pass.impl->cache, nullptr);
}

void encoder_backward_cached(const EncoderWeights& w, const EncoderPass& pass,
                             Mat dout, EncoderWeights& grads) {
  backward_impl(w, pass.impl->cache, std::move(dout), grads);
}

}  // namespace internal

MaskedTokens mask_tokens(const TokenSequence& seq, double rate, int vocab_size,
                         uint64_t seed) {
  if (rate <= 0.0 || rate >= 1.0) {
    throw std::invalid_argument("mask_tokens: rate must be in (0,1)");
  }
  if (vocab_size <= Vocabulary::kSpecialCount) {
    throw std::invalid_argument("mask_tokens: vocabulary has no content tokens");
  }
  Rng rng(seed);
  MaskedTokens result;
  result.ids = seq.ids;
  result.labels.assign(seq.ids.size(), -1);
  for (size_t i = 0; i < seq.ids.size(); ++i) {
    if (!seq.attention_mask[i]) continue;
    if (seq.ids[i] < Vocabulary::kSpecialCount) continue;
    if (rng.uniform_real() >= rate) continue;
    result.labels[i] = seq.ids[i];
    const double branch = rng.uniform_real();
    if (branch < 0.8) {
      result.ids[i] = Vocabulary::kMask;
    } else if (branch < 0.9) {
      // Random draw over content ids; specials would never be predictable.
      result.ids[i] = Vocabulary::kSpecialCount +
                      static_cast<int>(rng.uniform(static_cast<uint64_t>(
                          vocab_size - Vocabulary::kSpecialCount)));
    }  // else: keep the original token
  }
  return result;
}

namespace {

std::vector<std::string> non_blank_lines(const std::string& code) {
  std::vector<std::string> lines;
  std::istringstream in(code);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      lines.push_back(line);
    }
  }
  return lines;
}

}  // namespace

std::vector<NlpExample> make_nlp_examples(const PretrainFunction& fn,
                                          const std::vector<std::string>& line_pool,
                                          uint64_t seed) {
  const auto lines = non_blank_lines(fn.code);
  std::vector<NlpExample> examples;
  if (lines.size() < 2) return examples;
  Rng rng(seed);
  for (size_t i = 0; i + 1 < lines.size(); ++i) {
    const std::string& successor = lines[i + 1];
    if (rng.uniform_real() < 0.5) {
      examples.push_back({lines[i], successor, NlpLabel::follows});
      continue;
    }
    // Negative: any pool line that is not the true successor. A pool made
    // entirely of the successor cannot produce a negative; fall back to the
    // positive pair rather than lie about the label.
    std::string candidate;
    bool found = false;
    for (int attempt = 0; attempt < 64 && !line_pool.empty(); ++attempt) {
      candidate = line_pool[static_cast<size_t>(rng.uniform(line_pool.size()))];
      if (candidate != successor) {
        found = true;
        break;
      }
    }
    if (found) {
      examples.push_back({lines[i], candidate, NlpLabel::random});
    } else {
      examples.push_back({lines[i], successor, NlpLabel::follows});
    }
  }
  return examples;
}

PretrainExample build_pretrain_example(const NlpExample& example,
                                       const Vocabulary& vocab, int max_seq_len,
                                       double masking_rate, uint64_t seed) {
  if (max_seq_len < 4) {
    throw std::invalid_argument("build_pretrain_example: sequence too short");
  }
  std::vector<int> a = encode_content(example.line_a, vocab, false);
  std::vector<int> b = encode_content(example.line_b, vocab, false);
  // [CLS] A [SEP] B [SEP]: trim the longer side until the pair fits.
  const size_t budget = static_cast<size_t>(max_seq_len) - 3;
  while (a.size() + b.size() > budget) {
    if (a.size() >= b.size()) a.pop_back();
    else b.pop_back();
  }

  PretrainExample out;
  out.nlp_label = example.label;
  out.ids.reserve(static_cast<size_t>(max_seq_len));
  out.ids.push_back(Vocabulary::kCls);
  out.ids.insert(out.ids.end(), a.begin(), a.end());
  out.ids.push_back(Vocabulary::kSep);
  const size_t seg_boundary = out.ids.size();
  out.ids.insert(out.ids.end(), b.begin(), b.end());
  out.ids.push_back(Vocabulary::kSep);

  out.attention_mask.assign(out.ids.size(), 1);
  out.segment_ids.assign(out.ids.size(), 0);
  for (size_t i = seg_boundary; i < out.ids.size(); ++i) out.segment_ids[i] = 1;

  out.ids.resize(static_cast<size_t>(max_seq_len), Vocabulary::kPad);
  out.attention_mask.resize(static_cast<size_t>(max_seq_len), 0);
  out.segment_ids.resize(static_cast<size_t>(max_seq_len), 0);

  TokenSequence seq;
  seq.ids = out.ids;
  seq.attention_mask = out.attention_mask;
  MaskedTokens masked =
      mask_tokens(seq, masking_rate, static_cast<int>(vocab.size()), seed);
  out.ids = std::move(masked.ids);
  out.mcm_labels = std::move(masked.labels);
  return out;
}

int64_t plan_pretrain_steps(int64_t corpus_tokens, int max_seq_len,
                            int batch_size, double target_epochs) {
  if (corpus_tokens <= 0 || max_seq_len <= 0 || batch_size <= 0 ||
      target_epochs <= 0.0) {
    throw std::invalid_argument("plan_pretrain_steps: all inputs must be positive");
  }
  const double tokens_per_step =
      static_cast<double>(max_seq_len) * static_cast<double>(batch_size);
  const double steps = target_epochs * static_cast<double>(corpus_tokens) /
                       tokens_per_step;
  // Partial batches still cost a step, so round upward.
  return static_cast<int64_t>(std::ceil(steps));
}

double lr_at_step(double peak_lr, int64_t step, int64_t warmup_steps,
                  int64_t total_steps) {
  if (step < 1) step = 1;
  if (warmup_steps > 0 && step <= warmup_steps) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return peak_lr;
  const double remaining = static_cast<double>(total_steps - step);
  const double span = static_cast<double>(total_steps - warmup_steps);
  return peak_lr * std::max(0.0, remaining / span);
}

namespace {

struct HeadEval {
  double mcm_loss_sum = 0.0;  // summed over masked positions
  double nlp_loss_sum = 0.0;  // summed over examples
  int64_t mcm_count = 0;
  int64_t mcm_correct = 0;
  int64_t nlp_correct = 0;
};

/// Forward + heads for one example; optionally backward into grads.
void example_pass(const EncoderWeights& w, const PretrainExample& ex,
                  double mcm_denom, double nlp_denom, bool train_mode,
                  Rng* dropout_rng, EncoderWeights* grads, HeadEval* eval) {
  internal::ForwardCache cache;
  const Mat out = internal::forward_impl(w, ex.ids, ex.attention_mask,
                                         &ex.segment_ids, train_mode,
                                         dropout_rng,
                                         grads ? &cache : nullptr, nullptr);

  Mat dout;
  if (grads) dout = Mat::Zero(out.rows(), out.cols());

  for (size_t p = 0; p < ex.mcm_labels.size(); ++p) {
    const int label = ex.mcm_labels[p];
    if (label < 0) continue;
    const auto i = static_cast<Eigen::Index>(p);
    Eigen::RowVectorXd logits = out.row(i) * w.mcm_w + w.mcm_b.row(0);
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    eval->mcm_loss_sum += lse - logits(label);
    Eigen::Index argmax;
    logits.maxCoeff(&argmax);
    eval->mcm_correct += (argmax == label);
    ++eval->mcm_count;

    if (grads) {
      Eigen::RowVectorXd probs = (logits.array() - lse).exp();
      probs(label) -= 1.0;
      probs /= mcm_denom;
      grads->mcm_w += out.row(i).transpose() * probs;
      grads->mcm_b.row(0) += probs;
      dout.row(i) += probs * w.mcm_w.transpose();
    }
  }

  {
    const int label = ex.nlp_label == NlpLabel::follows ? 0 : 1;
    Eigen::RowVectorXd logits = out.row(0) * w.nlp_w + w.nlp_b.row(0);
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    eval->nlp_loss_sum += lse - logits(label);
    Eigen::Index argmax;
    logits.maxCoeff(&argmax);
    eval->nlp_correct += (argmax == label);

    if (grads) {
      Eigen::RowVectorXd probs = (logits.array() - lse).exp();
      probs(label) -= 1.0;
      probs /= nlp_denom;
      grads->nlp_w += out.row(0).transpose() * probs;
      grads->nlp_b.row(0) += probs;
      dout.row(0) += probs * w.nlp_w.transpose();
    }
  }

  if (grads) internal::backward_impl(w, cache, std::move(dout), *grads);
}

int64_t count_masked(const PretrainBatch& batch) {
  int64_t n = 0;
  for (const auto& ex : batch) {
    for (int label : ex.mcm_labels) n += (label >= 0);
  }
  return n;
}

PretrainEval batch_pass(const EncoderWeights& w, const PretrainBatch& batch,
                        EncoderWeights* grads, unsigned threads,
                        uint64_t dropout_seed, double dropout_p) {
  if (batch.empty()) throw std::invalid_argument("empty pre-training batch");
  const int64_t mcm_total = count_masked(batch);
  const double mcm_denom = std::max<int64_t>(mcm_total, 1);
  const auto nlp_denom = static_cast<double>(batch.size());
  const bool train_mode = dropout_p > 0.0;

  std::vector<HeadEval> evals(batch.size());
  std::vector<EncoderWeights> shard_grads;
  std::mutex merge_mutex;

  parallel_chunks(batch.size(), threads, [&](size_t begin, size_t end) {
    EncoderWeights local = grads ? grads->zeros_like() : EncoderWeights{};
    for (size_t i = begin; i < end; ++i) {
      Rng rng(mix_seed(dropout_seed, i));
      example_pass(w, batch[i], mcm_denom, nlp_denom, train_mode,
                   train_mode ? &rng : nullptr, grads ? &local : nullptr,
                   &evals[i]);
    }
    if (grads) {
      std::lock_guard<std::mutex> lock(merge_mutex);
      shard_grads.push_back(std::move(local));
    }
  });

  if (grads) {
    // Sum shard gradients tensor-by-tensor.
    for (const auto& shard : shard_grads) {
      std::vector<const Mat*> src;
      shard.visit([&src](const std::string&, const Mat& m) { src.push_back(&m); });
      size_t idx = 0;
      grads->visit([&](const std::string&, Mat& m) { m += *src[idx++]; });
    }
  }

  PretrainEval result;
  double mcm_loss_sum = 0.0;
  double nlp_loss_sum = 0.0;
  int64_t mcm_correct = 0;
  int64_t nlp_correct = 0;
  for (const auto& e : evals) {
    mcm_loss_sum += e.mcm_loss_sum;
    nlp_loss_sum += e.nlp_loss_sum;
    mcm_correct += e.mcm_correct;
    nlp_correct += e.nlp_correct;
  }
  result.mcm_count = mcm_total;
  result.mcm_loss = mcm_loss_sum / mcm_denom;
  result.nlp_loss = nlp_loss_sum / nlp_denom;
  result.loss = result.mcm_loss + result.nlp_loss;
  result.mcm_accuracy = mcm_total
                            ? static_cast<double>(mcm_correct) /
                                  static_cast<double>(mcm_total)
                            : 0.0;
  result.nlp_accuracy =
      static_cast<double>(nlp_correct) / static_cast<double>(batch.size());
  return result;
}

}  // namespace

PretrainEval pretrain_loss(const EncoderWeights& weights,
                           const PretrainBatch& batch) {
  return batch_pass(weights, batch, nullptr, 1, 0, 0.0);
}

PretrainEval pretrain_loss_grad(const EncoderWeights& weights,
                                const PretrainBatch& batch,
                                EncoderWeights& grads) {
  return batch_pass(weights, batch, &grads, 1, 0, 0.0);
}

Optimizer::Optimizer(OptimizerKind kind, const EncoderWeights& shape,
                     double beta1, double beta2, double weight_decay,
                     double epsilon)
    : kind_(kind),
      beta1_(beta1),
      beta2_(beta2),
      weight_decay_(weight_decay),
      epsilon_(epsilon),
      m_(shape.zeros_like()),
      v_(shape.zeros_like()) {}

void Optimizer::step(EncoderWeights& weights, const EncoderWeights& grads,
                     double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

  std::vector<Mat*> ws, ms, vs;
  std::vector<const Mat*> gs;
  weights.visit([&](const std::string&, Mat& m) { ws.push_back(&m); });
  grads.visit([&](const std::string&, const Mat& m) { gs.push_back(&m); });
  m_.visit([&](const std::string&, Mat& m) { ms.push_back(&m); });
  v_.visit([&](const std::string&, Mat& m) { vs.push_back(&m); });

  // Single-row tensors are biases and layer-norm parameters: no decay.
  std::vector<bool> decays;
  weights.visit([&](const std::string&, Mat& m) { decays.push_back(m.rows() > 1); });

  for (size_t i = 0; i < ws.size(); ++i) {
    Mat& w = *ws[i];
    const Mat& g = *gs[i];
    Mat& m = *ms[i];
    Mat& v = *vs[i];
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    const Mat mhat = m / bc1;
    const Mat vhat = v / bc2;
    Mat update = (mhat.array() / (vhat.array().sqrt() + epsilon_)).matrix();
    if (weight_decay_ > 0.0 && decays[i]) update += weight_decay_ * w;

    if (kind_ == OptimizerKind::adam) {
      w -= lr * update;
    } else {
      const double w_norm = w.norm();
      const double u_norm = update.norm();
      const double trust = (w_norm > 0.0 && u_norm > 0.0) ? w_norm / u_norm : 1.0;
      w -= lr * trust * update;
    }
  }
}

PretrainResult pretrain(EncoderWeights weights,
                        const std::vector<PretrainFunction>& corpus,
                        const Vocabulary& vocab, const PretrainConfig& config) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");

  int64_t corpus_tokens = 0;
  for (const auto& fn : corpus) corpus_tokens += fn.token_count;
  if (corpus_tokens <= 0) throw std::invalid_argument("pretrain: corpus has no tokens");

  const int64_t total_steps =
      config.max_steps > 0
          ? config.max_steps
          : plan_pretrain_steps(corpus_tokens, config.max_seq_len,
                                config.batch_size, config.target_epochs);
  const int64_t warmup = std::min<int64_t>(config.warmup_steps, total_steps);

  // Line pool for next-line negatives: every non-blank line in the corpus.
  std::vector<std::string> line_pool;
  for (const auto& fn : corpus) {
    auto lines = non_blank_lines(fn.code);
    line_pool.insert(line_pool.end(), lines.begin(), lines.end());
  }

  std::vector<NlpExample> examples;
  for (const auto& fn : corpus) {
    auto fn_examples = make_nlp_examples(
        fn, line_pool, mix_seed(config.seed, static_cast<uint64_t>(fn.id)));
    examples.insert(examples.end(), fn_examples.begin(), fn_examples.end());
  }
  if (examples.empty()) {
    throw std::invalid_argument("pretrain: corpus yields no line pairs");
  }

  Optimizer optimizer(OptimizerKind::adam, weights, config.beta1, config.beta2,
                      config.l2_weight_decay);
  PretrainResult result;
  result.history.reserve(static_cast<size_t>(total_steps));

  size_t cursor = 0;
  uint64_t pass = 0;
  auto reshuffle = [&]() {
    Rng rng(mix_seed(config.seed, 0xA11, pass));
    rng.shuffle(examples);
  };
  reshuffle();
  auto next_example = [&]() -> const NlpExample& {
    if (cursor == examples.size()) {
      cursor = 0;
      ++pass;
      reshuffle();
    }
    return examples[cursor++];
  };

  EncoderWeights grads = weights.zeros_like();
  for (int64_t step = 1; step <= total_steps; ++step) {
    PretrainBatch batch;
    batch.reserve(static_cast<size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      batch.push_back(build_pretrain_example(
          next_example(), vocab, config.max_seq_len, config.masking_rate,
          mix_seed(config.seed, static_cast<uint64_t>(step),
                   static_cast<uint64_t>(b))));
    }

    grads.visit([](const std::string&, Mat& m) { m.setZero(); });
    const PretrainEval eval =
        batch_pass(weights, batch, &grads, config.threads,
                   mix_seed(config.seed, 0xD0, static_cast<uint64_t>(step)),
                   weights.config.dropout_p);
    if (!std::isfinite(eval.loss)) {
      throw std::runtime_error("pre-training diverged at step " +
                               std::to_string(step) + " (loss not finite)");
    }

    optimizer.step(weights, grads,
                   lr_at_step(config.learning_rate, step, warmup, total_steps));

    result.history.push_back({step, eval.mcm_loss, eval.nlp_loss,
                              eval.mcm_accuracy, eval.nlp_accuracy});
  }

  result.weights = std::move(weights);
  return result;
}

EncoderWeights adapt_layers(const EncoderWeights& pretrained, int target_layers,
                            int target_heads) {
  if (target_layers < 1 ||
      target_layers > static_cast<int>(pretrained.layers.size())) {
    throw std::invalid_argument("adapt_layers: invalid layer count");
  }
  EncoderWeights out = pretrained;
  out.config.hidden_layers = target_layers;
  out.config.attention_heads = target_heads;
  out.config.validate();
  // Keep the lowest layers: they carry the most general representations.
  out.layers.resize(static_cast<size_t>(target_layers));
  return out;
}

namespace {

constexpr uint32_t kEncoderMagic = 0x4353454e;  // "CSEN"
constexpr uint32_t kEncoderVersion = 1;

}  // namespace

void save_encoder_checkpoint(const EncoderWeights& weights, uint64_t vocab_hash,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  binio::write_u32(out, kEncoderMagic);
  binio::write_u32(out, kEncoderVersion);
  const auto& c = weights.config;
  binio::write_u32(out, static_cast<uint32_t>(c.hidden_size));
  binio::write_u32(out, static_cast<uint32_t>(c.intermediate_size));
  binio::write_u32(out, static_cast<uint32_t>(c.attention_heads));
  binio::write_u32(out, static_cast<uint32_t>(c.hidden_layers));
  binio::write_u32(out, static_cast<uint32_t>(c.max_position));
  binio::write_u32(out, static_cast<uint32_t>(c.vocab_size));
  uint64_t dropout_bits;
  static_assert(sizeof(double) == 8);
  std::memcpy(&dropout_bits, &c.dropout_p, 8);
  binio::write_u64(out, dropout_bits);
  binio::write_u64(out, vocab_hash);
  binio::write_u64(out, weights.init_seed);

  uint32_t tensor_count = 0;
  weights.visit([&tensor_count](const std::string&, const Mat&) { ++tensor_count; });
  binio::write_u32(out, tensor_count);
  weights.visit([&out](const std::string& name, const Mat& m) {
    binio::write_string(out, name);
    binio::write_u32(out, static_cast<uint32_t>(m.rows()));
    binio::write_u32(out, static_cast<uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        binio::write_f32(out, static_cast<float>(m(i, j)));
      }
    }
  });
  if (!out) throw std::runtime_error("write failed: " + path);
}

LoadedEncoder load_encoder_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  if (binio::read_u32(in) != kEncoderMagic) {
    throw std::runtime_error("not an encoder checkpoint: " + path);
  }
  const uint32_t version = binio::read_u32(in);
  if (version != kEncoderVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  }
  EncoderConfig config;
  config.hidden_size = static_cast<int>(binio::read_u32(in));
  config.intermediate_size = static_cast<int>(binio::read_u32(in));
  config.attention_heads = static_cast<int>(binio::read_u32(in));
  config.hidden_layers = static_cast<int>(binio::read_u32(in));
  config.max_position = static_cast<int>(binio::read_u32(in));
  config.vocab_size = static_cast<int>(binio::read_u32(in));
  const uint64_t dropout_bits = binio::read_u64(in);
  std::memcpy(&config.dropout_p, &dropout_bits, 8);
  config.validate();

  LoadedEncoder loaded;
  loaded.vocab_hash = binio::read_u64(in);
  const uint64_t seed = binio::read_u64(in);
  loaded.weights = init_weights(config, 0);
  loaded.weights.init_seed = seed;

  std::map<std::string, Mat*> by_name;
  loaded.weights.visit(
      [&by_name](const std::string& name, Mat& m) { by_name[name] = &m; });

  const uint32_t tensor_count = binio::read_u32(in);
  if (tensor_count != by_name.size()) {
    throw std::runtime_error("checkpoint tensor count mismatch in " + path);
  }
  for (uint32_t t = 0; t < tensor_count; ++t) {
    const std::string name = binio::read_string(in);
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint has unknown tensor " + name);
    }
    Mat& m = *it->second;
    const auto rows = static_cast<Eigen::Index>(binio::read_u32(in));
    const auto cols = static_cast<Eigen::Index>(binio::read_u32(in));
    if (rows != m.rows() || cols != m.cols()) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               std::to_string(rows) + "x" + std::to_string(cols) +
                               ", expected " + std::to_string(m.rows()) + "x" +
                               std::to_string(m.cols()));
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        m(i, j) = static_cast<double>(binio::read_f32(in));
      }
    }
  }
  return loaded;
}

}  // namespace codesearch
