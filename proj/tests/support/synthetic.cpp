#include "support/synthetic.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

#include "codesearch/tokenizer.hpp"
#include "codesearch/util.hpp"

namespace codesearch::synth {

const std::vector<std::string>& keywords() {
  static const std::vector<std::string> words{
      "alpha",  "bravo",  "charlie", "delta",  "echo",   "foxtrot",
      "golf",   "hotel",  "india",   "juliet", "kilo",   "lima",
      "mike",   "november", "oscar", "papa",   "quebec", "romeo",
      "sierra", "tango",  "uniform", "victor", "whiskey", "xray",
      "yankee", "zulu",   "amber",   "beacon", "cinder", "dune"};
  return words;
}

std::string symbol_for(int keyword_index) {
  if (keyword_index < 0 || keyword_index >= kNumKeywords) {
    throw std::invalid_argument("keyword index out of range");
  }
  std::string s = "sym";
  s += static_cast<char>('0' + keyword_index / 10);
  s += static_cast<char>('0' + keyword_index % 10);
  return s;
}

std::vector<PretrainFunction> code_pretrain_corpus(size_t n, uint64_t seed) {
  std::vector<PretrainFunction> fns;
  fns.reserve(n);
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    const int start = static_cast<int>(rng.uniform(kNumKeywords));
    const int len = 3 + static_cast<int>(rng.uniform(3));
    std::string code = "function g" + std::to_string(i) + "() {\n";
    code += "var v0 = " + symbol_for(start) + "();\n";
    for (int j = 1; j < len; ++j) {
      code += "var v" + std::to_string(j) + " = " +
              symbol_for((start + j) % kNumKeywords) + "(v" +
              std::to_string(j - 1) + ");\n";
    }
    code += "return v" + std::to_string(len - 1) + ";\n}\n";
    PretrainFunction fn;
    fn.id = static_cast<int64_t>(i);
    fn.lang = Lang::js;
    fn.code = code;
    fn.token_count = static_cast<int64_t>(pretokenize(code, false).size());
    fns.push_back(std::move(fn));
  }
  return fns;
}

std::vector<PretrainFunction> text_pretrain_corpus(size_t n, uint64_t seed) {
  const auto& words = keywords();
  std::vector<PretrainFunction> fns;
  fns.reserve(n);
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    const int start = static_cast<int>(rng.uniform(kNumKeywords));
    const int len = 3 + static_cast<int>(rng.uniform(3));
    std::string text;
    for (int j = 0; j < len; ++j) {
      text += words[static_cast<size_t>((start + j) % kNumKeywords)] + " " +
              words[static_cast<size_t>((start + j + 1) % kNumKeywords)] + "\n";
    }
    PretrainFunction fn;
    fn.id = static_cast<int64_t>(i);
    fn.lang = Lang::js;
    fn.code = text;
    fn.token_count = static_cast<int64_t>(pretokenize(text, true).size());
    fns.push_back(std::move(fn));
  }
  return fns;
}

std::vector<QueryCodePair> make_pairs(size_t n, uint64_t seed) {
  // All distinct unordered keyword triples, shuffled; one pair per triple.
  std::vector<std::array<int, 3>> triples;
  for (int i = 0; i < kNumKeywords; ++i) {
    for (int j = i + 1; j < kNumKeywords; ++j) {
      for (int k = j + 1; k < kNumKeywords; ++k) triples.push_back({i, j, k});
    }
  }
  Rng rng(seed);
  rng.shuffle(triples);
  if (n > triples.size()) n = triples.size();

  const auto& words = keywords();
  std::vector<QueryCodePair> pairs;
  pairs.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    auto [a, b, c] = triples[i];
    QueryCodePair p;
    p.id = static_cast<int64_t>(1000 + i);
    p.lang = Lang::js;
    p.query = words[static_cast<size_t>(a)] + " " +
              words[static_cast<size_t>(b)] + " " +
              words[static_cast<size_t>(c)];
    p.code = "function pair" + std::to_string(p.id) + "() {\n" +
             "var r0 = " + symbol_for(a) + "(" + symbol_for(b) + ");\n" +
             "var r1 = " + symbol_for(c) + "(r0);\n" +
             "return r1;\n}\n";
    p.q_upvotes = 5;
    p.a_upvotes = 5;
    p.loc = 5;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

const std::vector<std::string>& synonyms() {
  static const std::vector<std::string> words{
      "anchor", "bishop", "copper", "dagger", "ember",   "falcon",
      "garnet", "harbor", "ivory",  "jasper", "kernel",  "lumen",
      "marble", "nickel", "onyx",   "pearl",  "quartz",  "raven",
      "saffron", "topaz", "umber",  "velvet", "willow",  "xenon",
      "yarrow", "zephyr", "argon",  "basalt", "cobalt",  "gleam"};
  return words;
}

std::string alt_symbol_for(int keyword_index) {
  if (keyword_index < 0 || keyword_index >= kNumKeywords) {
    throw std::invalid_argument("keyword index out of range");
  }
  std::string s = "alt";
  s += static_cast<char>('0' + keyword_index / 10);
  s += static_cast<char>('0' + keyword_index % 10);
  return s;
}

std::vector<PretrainFunction> mixed_text_corpus(size_t n, uint64_t seed) {
  const auto& base = keywords();
  const auto& syn = synonyms();
  std::vector<PretrainFunction> fns;
  fns.reserve(n);
  Rng rng(seed);
  auto spell = [&](int idx) -> const std::string& {
    const auto& list = rng.uniform(2) ? syn : base;
    return list[static_cast<size_t>(idx)];
  };
  for (size_t i = 0; i < n; ++i) {
    const int start = static_cast<int>(rng.uniform(kNumKeywords));
    const int len = 3 + static_cast<int>(rng.uniform(3));
    std::string text;
    for (int j = 0; j < len; ++j) {
      text += spell((start + j) % kNumKeywords) + " " +
              spell((start + j + 1) % kNumKeywords) + "\n";
    }
    if (rng.uniform(2) == 0) {
      const auto w = static_cast<size_t>(rng.uniform(kNumKeywords));
      text += base[w] + " " + syn[w] + "\n";
    }
    PretrainFunction fn;
    fn.id = static_cast<int64_t>(i);
    fn.lang = Lang::js;
    fn.code = text;
    fn.token_count = static_cast<int64_t>(pretokenize(text, true).size());
    fns.push_back(std::move(fn));
  }
  return fns;
}

std::vector<PretrainFunction> mixed_code_corpus(size_t n, uint64_t seed) {
  std::vector<PretrainFunction> fns;
  fns.reserve(n);
  Rng rng(seed);
  auto spell = [&](int idx) {
    return rng.uniform(2) ? alt_symbol_for(idx) : symbol_for(idx);
  };
  // No wrappers, assignments, or numbered names: each line is one call pair,
  // so a masked symbol's context is dominated by its partner.
  for (size_t i = 0; i < n; ++i) {
    const int start = static_cast<int>(rng.uniform(kNumKeywords));
    const int len = 3 + static_cast<int>(rng.uniform(3));
    std::string code;
    for (int j = 0; j < len; ++j) {
      code += spell((start + j) % kNumKeywords) + "(" +
              spell((start + j + 1) % kNumKeywords) + ");\n";
    }
    if (rng.uniform(2) == 0) {
      const int w = static_cast<int>(rng.uniform(kNumKeywords));
      code += symbol_for(w) + "(" + alt_symbol_for(w) + ");\n";
    }
    PretrainFunction fn;
    fn.id = static_cast<int64_t>(i);
    fn.lang = Lang::js;
    fn.code = code;
    fn.token_count = static_cast<int64_t>(pretokenize(code, false).size());
    fns.push_back(std::move(fn));
  }
  return fns;
}

std::vector<QueryCodePair> compact_pairs(size_t n, uint64_t seed) {
  std::vector<QueryCodePair> pairs = make_pairs(n, seed);
  for (auto& p : pairs) {
    std::array<int, 3> idx{};
    size_t field = 0;
    std::string word;
    const auto& base = keywords();
    auto flush = [&] {
      if (word.empty()) return;
      const auto it = std::find(base.begin(), base.end(), word);
      if (it == base.end()) {
        throw std::invalid_argument("compact_pairs: unknown word " + word);
      }
      idx.at(field++) = static_cast<int>(it - base.begin());
      word.clear();
    };
    for (char ch : p.query) {
      if (ch == ' ') {
        flush();
      } else {
        word += ch;
      }
    }
    flush();
    p.code = "return " + symbol_for(idx[0]) + "(" + symbol_for(idx[1]) + "(" +
             symbol_for(idx[2]) + "()));\n";
    p.loc = 1;
  }
  return pairs;
}

QueryCodePair synonym_query(const QueryCodePair& pair) {
  const auto& base = keywords();
  const auto& syn = synonyms();
  QueryCodePair out = pair;
  out.query.clear();
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    const auto it = std::find(base.begin(), base.end(), word);
    if (it == base.end()) {
      throw std::invalid_argument("synonym_query: unknown word " + word);
    }
    if (!out.query.empty()) out.query += ' ';
    out.query += syn[static_cast<size_t>(it - base.begin())];
    word.clear();
  };
  for (char ch : pair.query) {
    if (ch == ' ') {
      flush();
    } else {
      word += ch;
    }
  }
  flush();
  return out;
}

QueryCodePair alias_code(const QueryCodePair& pair) {
  QueryCodePair out = pair;
  size_t at = 0;
  while ((at = out.code.find("sym", at)) != std::string::npos) {
    out.code.replace(at, 3, "alt");
    at += 3;
  }
  return out;
}

std::vector<QueryCodePair> overlapping_pairs(size_t n, uint64_t seed) {
  std::vector<QueryCodePair> pairs = make_pairs(n, seed);
  for (auto& p : pairs) {
    std::array<std::string, 3> w;
    size_t field = 0;
    for (char ch : p.query) {
      if (ch == ' ') {
        ++field;
        continue;
      }
      w.at(field) += ch;
    }
    p.code = "function pair" + std::to_string(p.id) + "() {\n" +
             "var r0 = " + w[0] + "(" + w[1] + ");\n" +
             "var r1 = " + w[2] + "(r0);\n" +
             "return r1;\n}\n";
  }
  return pairs;
}

}  // namespace codesearch::synth
