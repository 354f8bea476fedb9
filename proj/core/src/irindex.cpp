#include "codesearch/irindex.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "binio.hpp"

namespace codesearch {

int32_t InvertedIndex::doc_freq(const std::string& term) const {
  auto it = postings.find(term);
  return it == postings.end() ? 0 : static_cast<int32_t>(it->second.size());
}

std::vector<std::string> analyze(const std::string& text) {
  std::vector<std::string> terms;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      terms.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) terms.push_back(std::move(cur));
  return terms;
}

InvertedIndex build_index(const std::vector<std::pair<DocId, std::string>>& docs) {
  InvertedIndex index;
  for (const auto& [doc_id, text] : docs) {
    if (index.doc_lengths.count(doc_id)) {
      throw std::invalid_argument("build_index: duplicate doc id " +
                                  std::to_string(doc_id));
    }
    const auto terms = analyze(text);
    index.doc_lengths[doc_id] = static_cast<int32_t>(terms.size());
    std::unordered_map<std::string, int32_t> tf;
    for (const auto& t : terms) ++tf[t];
    for (const auto& [term, count] : tf) {
      index.postings[term].push_back({doc_id, count});
    }
  }
  for (auto& [term, list] : index.postings) {
    std::sort(list.begin(), list.end(),
              [](const Posting& a, const Posting& b) { return a.doc_id < b.doc_id; });
  }
  return index;
}

namespace {

double average_doc_length(const InvertedIndex& index) {
  if (index.doc_lengths.empty()) return 0.0;
  int64_t total = 0;
  for (const auto& [id, len] : index.doc_lengths) total += len;
  return static_cast<double>(total) / static_cast<double>(index.doc_lengths.size());
}

}  // namespace

RankedResults search_ir(const InvertedIndex& index, const std::string& query,
                        size_t limit, IrScorer scorer) {
  if (limit < 1) throw std::invalid_argument("search_ir: limit must be >= 1");
  RankedResults results;
  const auto n = static_cast<double>(index.doc_count());
  if (n == 0) return results;

  const double avgdl = average_doc_length(index);
  constexpr double k1 = 1.2;
  constexpr double b = 0.75;

  std::unordered_map<DocId, double> scores;
  for (const auto& term : analyze(query)) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const auto df = static_cast<double>(it->second.size());
    for (const Posting& p : it->second) {
      const auto dl = static_cast<double>(index.doc_lengths.at(p.doc_id));
      const auto tf = static_cast<double>(p.tf);
      double contribution;
      if (scorer == IrScorer::classic_tfidf) {
        const double idf = 1.0 + std::log(n / (df + 1.0));
        contribution = std::sqrt(tf) * idf * idf / std::sqrt(dl);
      } else {
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        const double norm = tf + k1 * (1.0 - b + b * dl / avgdl);
        contribution = idf * tf * (k1 + 1.0) / norm;
      }
      scores[p.doc_id] += contribution;
    }
  }

  results.entries.reserve(scores.size());
  for (const auto& [doc_id, score] : scores) results.entries.push_back({doc_id, score});
  sort_ranked(results.entries);
  if (results.entries.size() > limit) results.entries.resize(limit);
  return results;
}

void save_ir_index(const InvertedIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  binio::write_u32(out, 0x43534952);  // "CSIR"
  binio::write_u32(out, 1);           // format version

  std::vector<std::pair<DocId, int32_t>> docs(index.doc_lengths.begin(),
                                              index.doc_lengths.end());
  std::sort(docs.begin(), docs.end());
  binio::write_u64(out, docs.size());
  DocId prev = 0;
  for (const auto& [id, len] : docs) {
    binio::write_varint(out, binio::zigzag(id - prev));
    binio::write_varint(out, static_cast<uint64_t>(len));
    prev = id;
  }

  binio::write_u64(out, index.postings.size());
  for (const auto& [term, list] : index.postings) {
    binio::write_string(out, term);
    binio::write_u64(out, list.size());
    prev = 0;
    for (const Posting& p : list) {
      binio::write_varint(out, binio::zigzag(p.doc_id - prev));
      binio::write_varint(out, static_cast<uint64_t>(p.tf));
      prev = p.doc_id;
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

InvertedIndex load_ir_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  if (binio::read_u32(in) != 0x43534952) {
    throw std::runtime_error("not an index file: " + path);
  }
  const uint32_t version = binio::read_u32(in);
  if (version != 1) {
    throw std::runtime_error("unsupported index format version " +
                             std::to_string(version));
  }

  InvertedIndex index;
  const uint64_t n_docs = binio::read_u64(in);
  DocId prev = 0;
  for (uint64_t i = 0; i < n_docs; ++i) {
    const DocId id = prev + binio::unzigzag(binio::read_varint(in));
    const auto len = static_cast<int32_t>(binio::read_varint(in));
    index.doc_lengths[id] = len;
    prev = id;
  }

  const uint64_t n_terms = binio::read_u64(in);
  for (uint64_t i = 0; i < n_terms; ++i) {
    std::string term = binio::read_string(in);
    const uint64_t n_postings = binio::read_u64(in);
    auto& list = index.postings[term];
    list.reserve(n_postings);
    prev = 0;
    for (uint64_t j = 0; j < n_postings; ++j) {
      const DocId id = prev + binio::unzigzag(binio::read_varint(in));
      const auto tf = static_cast<int32_t>(binio::read_varint(in));
      list.push_back({id, tf});
      prev = id;
    }
  }
  return index;
}

}  // namespace codesearch
