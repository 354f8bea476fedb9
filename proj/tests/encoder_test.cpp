#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "codesearch/encoder.hpp"
#include "codesearch/tokenizer.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace codesearch;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.hidden_size = 16;
  c.intermediate_size = 32;
  c.attention_heads = 2;
  c.hidden_layers = 2;
  c.max_position = 12;
  c.vocab_size = 30;
  c.dropout_p = 0.0;
  return c;
}

TokenSequence tiny_sequence() {
  TokenSequence seq;
  // [CLS] 7 9 12 [SEP] [PAD] [PAD] [PAD]
  seq.ids = {Vocabulary::kCls, 7, 9, 12, Vocabulary::kSep,
             Vocabulary::kPad, Vocabulary::kPad, Vocabulary::kPad};
  seq.attention_mask = {1, 1, 1, 1, 1, 0, 0, 0};
  seq.original_length = 3;
  return seq;
}

size_t tensor_count(const EncoderWeights& w) {
  size_t n = 0;
  w.visit([&](const std::string&, const Mat&) { ++n; });
  return n;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent dimensions") {
  EncoderConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.attention_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.hidden_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(tiny_config().head_dim() == 8);
}

TEST_CASE("init_weights is deterministic and shaped by the config") {
  const EncoderConfig c = tiny_config();
  const EncoderWeights a = init_weights(c, 11);
  const EncoderWeights b = init_weights(c, 11);
  const EncoderWeights other = init_weights(c, 12);

  CHECK(a.init_seed == 11);
  CHECK(a.token_embeddings.rows() == c.vocab_size);
  CHECK(a.token_embeddings.cols() == c.hidden_size);
  CHECK(a.position_embeddings.rows() == c.max_position);
  CHECK(a.segment_embeddings.rows() == 2);
  CHECK(a.layers.size() == 2);
  CHECK(a.layers[0].w1.rows() == c.hidden_size);
  CHECK(a.layers[0].w1.cols() == c.intermediate_size);
  CHECK(a.mcm_w.cols() == c.vocab_size);
  CHECK(a.nlp_w.cols() == 2);

  CHECK(a.token_embeddings == b.token_embeddings);
  CHECK(a.layers[1].w2 == b.layers[1].w2);
  CHECK(a.token_embeddings != other.token_embeddings);

  // Truncated normal with sigma 0.02 stays within two sigma.
  CHECK(a.token_embeddings.cwiseAbs().maxCoeff() <= 0.04 + 1e-12);
  CHECK(a.token_embeddings.cwiseAbs().maxCoeff() > 0.0);
  // Layer norms start as identity, biases at zero.
  CHECK(a.emb_ln_gain.isOnes());
  CHECK(a.emb_ln_bias.isZero());
  CHECK(a.layers[0].bq.isZero());
  CHECK(a.all_finite());
}

TEST_CASE("visit enumerates every tensor exactly once with stable names") {
  EncoderWeights w = init_weights(tiny_config(), 1);
  std::set<std::string> names;
  size_t count = 0;
  w.visit([&](const std::string& name, Mat&) {
    names.insert(name);
    ++count;
  });
  CHECK(count == 5 + 16 * 2 + 4);
  CHECK(names.size() == count);  // no duplicate names
  CHECK(names.count("token_embeddings") == 1);
  CHECK(names.count("layer0.wq") == 1);
  CHECK(names.count("layer1.ffn_ln_bias") == 1);
  CHECK(names.count("mcm_w") == 1);
  CHECK(names.count("nlp_b") == 1);

  const EncoderWeights z = w.zeros_like();
  CHECK(tensor_count(z) == count);
  CHECK(z.token_embeddings.rows() == w.token_embeddings.rows());
  bool all_zero = true;
  z.visit([&](const std::string&, const Mat& m) { all_zero &= m.isZero(); });
  CHECK(all_zero);

  w.layers[0].wo(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK(!w.all_finite());
}

TEST_CASE("forward returns one contextual vector per position") {
  const EncoderWeights w = init_weights(tiny_config(), 3);
  const TokenSequence seq = tiny_sequence();
  const Mat out = encoder_forward(w, seq);
  CHECK(out.rows() == 8);
  CHECK(out.cols() == 16);
  CHECK(out.allFinite());
  // No dropout: the pass is a pure function of its inputs.
  CHECK(encoder_forward(w, seq) == out);
}

TEST_CASE("attention rows are distributions that ignore padded keys") {
  const EncoderWeights w = init_weights(tiny_config(), 3);
  const TokenSequence seq = tiny_sequence();
  ForwardTrace trace;
  encoder_forward(w, seq, nullptr, false, nullptr, &trace);
  REQUIRE(trace.attention.size() == 2);
  REQUIRE(trace.attention[0].size() == 2);
  for (const auto& layer : trace.attention) {
    for (const Mat& p : layer) {
      REQUIRE(p.rows() == 8);
      REQUIRE(p.cols() == 8);
      for (int i = 0; i < p.rows(); ++i) {
        CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        for (int j = 5; j < 8; ++j) CHECK(p(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("padded positions cannot influence real ones") {
  const EncoderWeights w = init_weights(tiny_config(), 3);
  TokenSequence seq = tiny_sequence();
  const Mat base = encoder_forward(w, seq);
  seq.ids[6] = 21;  // change a padded slot's token
  const Mat poked = encoder_forward(w, seq);
  // Masked attention scores underflow to exactly zero weight, so real rows
  // match bit for bit.
  for (int i = 0; i < 5; ++i) {
    CHECK(base.row(i) == poked.row(i));
  }
}

TEST_CASE("segment ids shift the embedding") {
  const EncoderWeights w = init_weights(tiny_config(), 3);
  const TokenSequence seq = tiny_sequence();
  const std::vector<int> segments = {0, 0, 1, 1, 1, 0, 0, 0};
  const Mat with_segments = encoder_forward(w, seq, &segments);
  const Mat without = encoder_forward(w, seq);
  CHECK(with_segments != without);
}

TEST_CASE("dropout is seed-deterministic and off at inference") {
  EncoderConfig c = tiny_config();
  c.dropout_p = 0.3;
  const EncoderWeights w = init_weights(c, 5);
  const TokenSequence seq = tiny_sequence();
  Rng r1(99), r2(99), r3(100);
  const Mat a = encoder_forward(w, seq, nullptr, true, &r1);
  const Mat b = encoder_forward(w, seq, nullptr, true, &r2);
  const Mat other = encoder_forward(w, seq, nullptr, true, &r3);
  CHECK(a == b);
  CHECK(a != other);
  // train_mode off ignores the generator entirely.
  Rng r4(99);
  CHECK(encoder_forward(w, seq) == encoder_forward(w, seq, nullptr, false, &r4));
}

TEST_CASE("analytic gradients match finite differences everywhere") {
  EncoderConfig c;
  c.hidden_size = 8;
  c.intermediate_size = 16;
  c.attention_heads = 2;
  c.hidden_layers = 1;
  c.max_position = 10;
  c.vocab_size = 23;
  c.dropout_p = 0.0;
  EncoderWeights w = init_weights(c, 17);

  // Two handmade examples covering both heads: masked labels for the token
  // head, one positive and one negative next-line label, real padding, and a
  // segment boundary.
  PretrainBatch batch(2);
  batch[0].ids = {Vocabulary::kCls, 6, Vocabulary::kMask, 8, Vocabulary::kSep,
                  9, 10, Vocabulary::kSep, Vocabulary::kPad, Vocabulary::kPad};
  batch[0].attention_mask = {1, 1, 1, 1, 1, 1, 1, 1, 0, 0};
  batch[0].segment_ids = {0, 0, 0, 0, 0, 1, 1, 1, 0, 0};
  batch[0].mcm_labels = {-1, -1, 7, -1, -1, 12, -1, -1, -1, -1};
  batch[0].nlp_label = NlpLabel::follows;

  batch[1].ids = {Vocabulary::kCls, 14, 15, Vocabulary::kSep, Vocabulary::kMask,
                  17, Vocabulary::kSep, Vocabulary::kPad, Vocabulary::kPad,
                  Vocabulary::kPad};
  batch[1].attention_mask = {1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  batch[1].segment_ids = {0, 0, 0, 0, 1, 1, 1, 0, 0, 0};
  batch[1].mcm_labels = {-1, 5, -1, -1, 16, -1, -1, -1, -1, -1};
  batch[1].nlp_label = NlpLabel::random;

  EncoderWeights grads = w.zeros_like();
  const PretrainEval eval = pretrain_loss_grad(w, batch, grads);
  CHECK(eval.mcm_count == 4);
  CHECK(std::isfinite(eval.loss));
  CHECK(eval.loss == doctest::Approx(eval.mcm_loss + eval.nlp_loss));

  const double h = 1e-5;
  size_t checked = 0;
  std::vector<Mat*> tensors;
  std::vector<const Mat*> grad_tensors;
  std::vector<std::string> names;
  w.visit([&](const std::string& name, Mat& m) {
    tensors.push_back(&m);
    names.push_back(name);
  });
  grads.visit([&](const std::string&, const Mat& m) { grad_tensors.push_back(&m); });

  for (size_t t = 0; t < tensors.size(); ++t) {
    Mat& m = *tensors[t];
    const Mat& g = *grad_tensors[t];
    // Probe the corners, the middle, and a low row (for the embedding
    // tables that row is an id the batch actually uses).
    std::vector<std::pair<int, int>> probes = {
        {0, 0},
        {static_cast<int>(m.rows()) - 1, static_cast<int>(m.cols()) - 1},
        {static_cast<int>(m.rows()) / 2, static_cast<int>(m.cols()) / 2},
        {std::min<int>(static_cast<int>(m.rows()) - 1, 6),
         std::min<int>(static_cast<int>(m.cols()) - 1, 1)},
    };
    for (auto [i, j] : probes) {
      const double saved = m(i, j);
      m(i, j) = saved + h;
      const double up = pretrain_loss(w, batch).loss;
      m(i, j) = saved - h;
      const double down = pretrain_loss(w, batch).loss;
      m(i, j) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double analytic = g(i, j);
      // The 1e-6 floor keeps central-difference cancellation noise (~1e-11
      // at this loss magnitude) from dominating the quotient on the
      // near-zero gradients of rarely-used parameters.
      const double scale = std::max({1e-6, std::abs(fd), std::abs(analytic)});
      INFO(names[t], "(", i, ",", j, "): fd=", fd, " analytic=", analytic);
      CHECK(std::abs(fd - analytic) / scale < 1e-4);
      ++checked;
    }
  }
  CHECK(checked == 4 * (5 + 16 + 4));
}

TEST_CASE("mask_tokens only touches real content positions") {
  TokenSequence seq;
  const size_t n = 2000;
  seq.ids.assign(n, 7);
  seq.ids[0] = Vocabulary::kCls;
  seq.ids[n - 2] = Vocabulary::kSep;
  seq.ids[n - 1] = Vocabulary::kPad;
  seq.attention_mask.assign(n, 1);
  seq.attention_mask[n - 1] = 0;

  const MaskedTokens m = mask_tokens(seq, 0.15, 1000, 42);
  REQUIRE(m.ids.size() == n);
  REQUIRE(m.labels.size() == n);
  CHECK(m.labels[0] == -1);
  CHECK(m.labels[n - 2] == -1);
  CHECK(m.labels[n - 1] == -1);
  CHECK(m.ids[0] == Vocabulary::kCls);
  CHECK(m.ids[n - 1] == Vocabulary::kPad);

  size_t chosen = 0, masked = 0, kept = 0, randomized = 0;
  for (size_t i = 0; i < n; ++i) {
    if (m.labels[i] == -1) {
      CHECK(m.ids[i] == seq.ids[i]);
      continue;
    }
    ++chosen;
    CHECK(m.labels[i] == 7);
    if (m.ids[i] == Vocabulary::kMask) {
      ++masked;
    } else if (m.ids[i] == 7) {
      ++kept;
    } else {
      CHECK(m.ids[i] >= Vocabulary::kSpecialCount);
      CHECK(m.ids[i] < 1000);
      ++randomized;
    }
  }
  // 1997 maskable positions at rate 0.15: expect ~300, sd ~16.
  CHECK(chosen > 220);
  CHECK(chosen < 380);
  CHECK(masked > chosen / 2);           // 80% branch dominates
  CHECK(kept + randomized < chosen / 2);
  CHECK(kept > 0);
  CHECK(randomized > 0);

  const MaskedTokens again = mask_tokens(seq, 0.15, 1000, 42);
  CHECK(again.ids == m.ids);
  CHECK(again.labels == m.labels);
  const MaskedTokens reseeded = mask_tokens(seq, 0.15, 1000, 43);
  CHECK(reseeded.ids != m.ids);

  CHECK_THROWS_AS(mask_tokens(seq, 0.0, 1000, 1), std::invalid_argument);
  CHECK_THROWS_AS(mask_tokens(seq, 1.0, 1000, 1), std::invalid_argument);
  CHECK_THROWS_AS(mask_tokens(seq, 0.15, Vocabulary::kSpecialCount, 1),
                  std::invalid_argument);
}

TEST_CASE("next-line examples pair adjacent lines or pool impostors") {
  PretrainFunction fn;
  fn.id = 9;
  fn.code = "function f() {\n\nvar a = g();\n  \nvar b = h(a);\nreturn b;\n}\n";
  const std::vector<std::string> pool = {"var z = 0;", "return z;", "var b = h(a);"};

  bool saw_follows = false, saw_random = false;
  for (uint64_t seed = 0; seed < 64; ++seed) {
    const auto examples = make_nlp_examples(fn, pool, seed);
    REQUIRE(examples.size() == 4);  // five non-blank lines
    const std::vector<std::string> lines = {"function f() {", "var a = g();",
                                            "var b = h(a);", "return b;", "}"};
    for (size_t i = 0; i < examples.size(); ++i) {
      CHECK(examples[i].line_a == lines[i]);
      if (examples[i].label == NlpLabel::follows) {
        saw_follows = true;
        CHECK(examples[i].line_b == lines[i + 1]);
      } else {
        saw_random = true;
        CHECK(examples[i].line_b != lines[i + 1]);
        CHECK(std::count(pool.begin(), pool.end(), examples[i].line_b) > 0);
      }
    }
  }
  CHECK(saw_follows);
  CHECK(saw_random);

  // Deterministic in the seed.
  const auto a = make_nlp_examples(fn, pool, 7);
  const auto b = make_nlp_examples(fn, pool, 7);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].line_b == b[i].line_b);
    CHECK((a[i].label == b[i].label));
  }

  // Too short to pair.
  PretrainFunction one_liner;
  one_liner.code = "return 1;\n";
  CHECK(make_nlp_examples(one_liner, pool, 1).empty());

  // No usable negative: every example falls back to the true successor.
  PretrainFunction two_lines;
  two_lines.code = "var a = 1;\nreturn a;\n";
  for (uint64_t seed = 0; seed < 32; ++seed) {
    const auto fallback = make_nlp_examples(two_lines, {"return a;"}, seed);
    REQUIRE(fallback.size() == 1);
    CHECK(fallback[0].label == NlpLabel::follows);
    CHECK(fallback[0].line_b == "return a;");
  }
}

TEST_CASE("pretrain examples are framed, segmented, and masked") {
  VocabTrainOptions opts;
  opts.vocab_size = 60;
  const Vocabulary vocab = train_vocab(
      {"var a = g();", "var b = h(a);", "return b;", "function f() {"}, opts);

  NlpExample ex;
  ex.line_a = "var a = g();";
  ex.line_b = "return b;";
  ex.label = NlpLabel::random;
  const PretrainExample built = build_pretrain_example(ex, vocab, 24, 0.15, 5);

  REQUIRE(built.ids.size() == 24);
  REQUIRE(built.attention_mask.size() == 24);
  REQUIRE(built.segment_ids.size() == 24);
  REQUIRE(built.mcm_labels.size() == 24);
  CHECK(built.nlp_label == NlpLabel::random);
  CHECK(built.ids[0] == Vocabulary::kCls);

  const size_t a_len = encode_content(ex.line_a, vocab, false).size();
  const size_t b_len = encode_content(ex.line_b, vocab, false).size();
  const size_t first_sep = 1 + a_len;
  const size_t second_sep = first_sep + 1 + b_len;
  CHECK(built.ids[first_sep] == Vocabulary::kSep);
  CHECK(built.ids[second_sep] == Vocabulary::kSep);
  for (size_t i = 0; i < built.ids.size(); ++i) {
    const bool real = i <= second_sep;
    CHECK(built.attention_mask[i] == (real ? 1 : 0));
    if (!real) {
      CHECK(built.ids[i] == Vocabulary::kPad);
      CHECK(built.segment_ids[i] == 0);
    } else {
      CHECK(built.segment_ids[i] == (i > first_sep ? 1 : 0));
    }
    if (built.mcm_labels[i] != -1) {
      CHECK(built.attention_mask[i] == 1);
      CHECK(built.mcm_labels[i] >= Vocabulary::kSpecialCount);
    }
  }

  // Trimming favors the longer side until the pair fits the budget.
  const PretrainExample tight = build_pretrain_example(ex, vocab, 8, 0.15, 5);
  REQUIRE(tight.ids.size() == 8);
  CHECK(tight.attention_mask[7] == 1);  // budget fully used
  CHECK_THROWS_AS(build_pretrain_example(ex, vocab, 3, 0.15, 5),
                  std::invalid_argument);

  // Masking is seeded.
  const PretrainExample same = build_pretrain_example(ex, vocab, 24, 0.15, 5);
  CHECK(same.ids == built.ids);
  CHECK(same.mcm_labels == built.mcm_labels);
}

TEST_CASE("step planning charges partial batches a whole step") {
  CHECK(plan_pretrain_steps(100, 10, 2, 1.0) == 5);
  CHECK(plan_pretrain_steps(101, 10, 2, 1.0) == 6);
  CHECK(plan_pretrain_steps(100, 10, 2, 2.5) == 13);  // 12.5 rounds up
  CHECK(plan_pretrain_steps(1, 512, 64, 1.0) == 1);
  CHECK_THROWS_AS(plan_pretrain_steps(0, 10, 2, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(plan_pretrain_steps(100, 10, 2, 0.0), std::invalid_argument);
}

TEST_CASE("learning rate ramps up then decays to zero") {
  CHECK(lr_at_step(1.0, 1, 10, 100) == doctest::Approx(0.1));
  CHECK(lr_at_step(1.0, 5, 10, 100) == doctest::Approx(0.5));
  CHECK(lr_at_step(1.0, 10, 10, 100) == doctest::Approx(1.0));
  CHECK(lr_at_step(1.0, 55, 10, 100) == doctest::Approx(0.5));
  CHECK(lr_at_step(1.0, 100, 10, 100) == doctest::Approx(0.0));
  CHECK(lr_at_step(1.0, 500, 10, 100) == doctest::Approx(0.0));
  // Degenerate plan: everything is warmup.
  CHECK(lr_at_step(2e-4, 3, 10, 10) == doctest::Approx(2e-4 * 0.3));
  CHECK(lr_at_step(2e-4, 10, 10, 10) == doctest::Approx(2e-4));
}

TEST_CASE("adam moves unit gradients by the learning rate") {
  EncoderWeights w = init_weights(tiny_config(), 2);
  EncoderWeights grads = w.zeros_like();
  grads.visit([](const std::string&, Mat& m) { m.setOnes(); });

  // With unit gradients, bias-corrected m-hat and v-hat are both exactly 1,
  // so each entry moves by lr / (1 + eps).
  const double unit = 1.0 / (1.0 + 1e-8);

  SUBCASE("without weight decay") {
    Optimizer opt(OptimizerKind::adam, w, 0.9, 0.999, 0.0);
    const double before = w.layers[0].wq(1, 2);
    const double bias_before = w.layers[0].bq(0, 3);
    opt.step(w, grads, 0.01);
    CHECK(opt.steps_taken() == 1);
    CHECK(std::abs(w.layers[0].wq(1, 2) - (before - 0.01 * unit)) < 1e-12);
    CHECK(std::abs(w.layers[0].bq(0, 3) - (bias_before - 0.01 * unit)) < 1e-12);
    // Constant gradients keep the update at the learning rate.
    const double after_one = w.layers[0].wq(1, 2);
    opt.step(w, grads, 0.01);
    CHECK(std::abs(w.layers[0].wq(1, 2) - (after_one - 0.01 * unit)) < 1e-12);
  }

  SUBCASE("decay applies to matrices but not single-row tensors") {
    Optimizer opt(OptimizerKind::adam, w, 0.9, 0.999, 0.1);
    const double before = w.token_embeddings(3, 4);
    const double gain_before = w.emb_ln_gain(0, 2);
    opt.step(w, grads, 0.01);
    const double expected = before - 0.01 * (unit + 0.1 * before);
    CHECK(std::abs(w.token_embeddings(3, 4) - expected) < 1e-12);
    // Layer-norm gain: no decay term, pure adam move.
    CHECK(std::abs(w.emb_ln_gain(0, 2) - (gain_before - 0.01 * unit)) < 1e-12);
  }
}

TEST_CASE("lamb scales the adam update by the trust ratio") {
  EncoderWeights w = init_weights(tiny_config(), 2);
  EncoderWeights grads = w.zeros_like();
  grads.visit([](const std::string&, Mat& m) { m.setOnes(); });

  const Mat before = w.layers[0].wq;
  const Mat bias_before = w.layers[0].bq;
  Optimizer opt(OptimizerKind::lamb, w, 0.9, 0.999, 0.0);
  opt.step(w, grads, 0.01);

  // Unit gradients give a uniform update of 1/(1+eps) per entry.
  const double unit = 1.0 / (1.0 + 1e-8);
  Mat update = Mat::Constant(before.rows(), before.cols(), unit);
  const double trust = before.norm() / update.norm();
  const Mat expected = before - 0.01 * trust * update;
  CHECK((w.layers[0].wq - expected).cwiseAbs().maxCoeff() < 1e-9);

  // Zero-norm tensors fall back to a trust ratio of one.
  CHECK(bias_before.isZero());
  CHECK(w.layers[0].bq(0, 0) == doctest::Approx(-0.01 * unit).epsilon(1e-9));
}

TEST_CASE("pretraining drives the joint loss down") {
  const auto corpus = synth::code_pretrain_corpus(20, 77);
  std::vector<std::string> texts;
  for (const auto& fn : corpus) texts.push_back(fn.code);
  VocabTrainOptions vopts;
  vopts.vocab_size = 150;
  const Vocabulary vocab = train_vocab(texts, vopts);

  EncoderConfig c;
  c.hidden_size = 16;
  c.intermediate_size = 32;
  c.attention_heads = 2;
  c.hidden_layers = 1;
  c.max_position = 24;
  c.vocab_size = static_cast<int>(vocab.size());
  c.dropout_p = 0.0;

  PretrainConfig pc;
  pc.learning_rate = 1e-3;
  pc.warmup_steps = 5;
  pc.batch_size = 8;
  pc.max_seq_len = 24;
  pc.max_steps = 60;
  pc.seed = 3;
  pc.threads = 2;

  const PretrainResult run = pretrain(init_weights(c, 21), corpus, vocab, pc);
  REQUIRE(run.history.size() == 60);
  CHECK(run.weights.all_finite());
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 10; ++i) {
    early += run.history[static_cast<size_t>(i)].mcm_loss +
             run.history[static_cast<size_t>(i)].nlp_loss;
    late += run.history[static_cast<size_t>(50 + i)].mcm_loss +
            run.history[static_cast<size_t>(50 + i)].nlp_loss;
  }
  CHECK(late < early);
  for (const auto& s : run.history) {
    CHECK(std::isfinite(s.mcm_loss));
    CHECK(std::isfinite(s.nlp_loss));
    CHECK(s.nlp_accuracy >= 0.0);
    CHECK(s.nlp_accuracy <= 1.0);
  }

  // Single-threaded runs are bitwise reproducible.
  pc.threads = 1;
  pc.max_steps = 8;
  const PretrainResult r1 = pretrain(init_weights(c, 21), corpus, vocab, pc);
  const PretrainResult r2 = pretrain(init_weights(c, 21), corpus, vocab, pc);
  REQUIRE(r1.history.size() == r2.history.size());
  for (size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].mcm_loss == r2.history[i].mcm_loss);
  }
  bool identical = true;
  std::vector<const Mat*> t1, t2;
  r1.weights.visit([&](const std::string&, const Mat& m) { t1.push_back(&m); });
  r2.weights.visit([&](const std::string&, const Mat& m) { t2.push_back(&m); });
  for (size_t i = 0; i < t1.size(); ++i) identical &= (*t1[i] == *t2[i]);
  CHECK(identical);
}

TEST_CASE("pretrain rejects unusable corpora") {
  const Vocabulary vocab = [] {
    VocabTrainOptions opts;
    opts.vocab_size = 40;
    return train_vocab({"var a = 1;"}, opts);
  }();
  EncoderWeights w = init_weights(tiny_config(), 1);
  PretrainConfig pc;
  pc.max_steps = 1;
  CHECK_THROWS_AS(pretrain(w, {}, vocab, pc), std::invalid_argument);

  PretrainFunction empty_fn;
  empty_fn.code = "";
  empty_fn.token_count = 0;
  CHECK_THROWS_AS(pretrain(w, {empty_fn}, vocab, pc), std::invalid_argument);
}

TEST_CASE("layer adaptation keeps the bottom of the stack") {
  const EncoderWeights deep = init_weights(tiny_config(), 8);
  const EncoderWeights shallow = adapt_layers(deep, 1, 4);
  CHECK(shallow.config.hidden_layers == 1);
  CHECK(shallow.config.attention_heads == 4);
  REQUIRE(shallow.layers.size() == 1);
  CHECK(shallow.layers[0].wq == deep.layers[0].wq);
  CHECK(shallow.layers[0].ffn_ln_gain == deep.layers[0].ffn_ln_gain);
  CHECK(shallow.token_embeddings == deep.token_embeddings);
  CHECK(shallow.mcm_w == deep.mcm_w);

  CHECK_THROWS_AS(adapt_layers(deep, 3, 2), std::invalid_argument);
  CHECK_THROWS_AS(adapt_layers(deep, 0, 2), std::invalid_argument);
  CHECK_THROWS_AS(adapt_layers(deep, 1, 3), std::invalid_argument);  // 16 % 3
}

TEST_CASE("checkpoints round-trip through float32 files") {
  const EncoderWeights w = init_weights(tiny_config(), 31);
  const std::string path = "encoder_ckpt_test.bin";
  save_encoder_checkpoint(w, 0xFEEDBEEF, path);
  const LoadedEncoder loaded = load_encoder_checkpoint(path);
  std::remove(path.c_str());

  CHECK(loaded.vocab_hash == 0xFEEDBEEF);
  CHECK(loaded.weights.init_seed == w.init_seed);
  CHECK(loaded.weights.config.hidden_size == 16);
  CHECK(loaded.weights.config.hidden_layers == 2);
  CHECK(loaded.weights.config.dropout_p == w.config.dropout_p);

  std::vector<const Mat*> orig, back;
  w.visit([&](const std::string&, const Mat& m) { orig.push_back(&m); });
  loaded.weights.visit([&](const std::string&, const Mat& m) { back.push_back(&m); });
  REQUIRE(orig.size() == back.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    REQUIRE(orig[i]->rows() == back[i]->rows());
    REQUIRE(orig[i]->cols() == back[i]->cols());
    CHECK((*orig[i] - *back[i]).cwiseAbs().maxCoeff() < 1e-6);
  }

  // The float32 round-trip barely perturbs the forward pass.
  const TokenSequence seq = tiny_sequence();
  const Mat a = encoder_forward(w, seq);
  const Mat b = encoder_forward(loaded.weights, seq);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("checkpoint loading rejects garbage") {
  const std::string path = "encoder_bad_ckpt_test.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_encoder_checkpoint(path), std::runtime_error);

  const EncoderWeights w = init_weights(tiny_config(), 1);
  save_encoder_checkpoint(w, 1, path);
  {
    // Truncate the tensor payload.
    std::ifstream in(path, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
  }
  CHECK_THROWS_AS(load_encoder_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
}
