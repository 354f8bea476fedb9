#include "codesearch/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "codesearch/tokenizer.hpp"
#include "codesearch/util.hpp"

namespace codesearch {

using nlohmann::json;

std::string to_string(Lang lang) {
  switch (lang) {
    case Lang::js: return "js";
    case Lang::java: return "java";
    case Lang::py: return "py";
    case Lang::php: return "php";
    case Lang::go: return "go";
    case Lang::ruby: return "ruby";
  }
  throw std::invalid_argument("unknown language value");
}

Lang lang_from_string(const std::string& name) {
  if (name == "js") return Lang::js;
  if (name == "java") return Lang::java;
  if (name == "py") return Lang::py;
  if (name == "php") return Lang::php;
  if (name == "go") return Lang::go;
  if (name == "ruby") return Lang::ruby;
  throw std::invalid_argument("unknown language: " + name);
}

namespace {

/// The tag text a question must carry (as a substring) for each language.
std::string lang_tag(Lang lang) {
  switch (lang) {
    case Lang::js: return "javascript";
    case Lang::java: return "java";
    case Lang::py: return "python";
    case Lang::php: return "php";
    case Lang::go: return "go";
    case Lang::ruby: return "ruby";
  }
  throw std::invalid_argument("unknown language value");
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

/// Dump fields hold ints or numeric strings depending on the exporter.
int64_t json_int(const json& j, const char* field) {
  const auto& v = j.at(field);
  if (v.is_number_integer()) return v.get<int64_t>();
  if (v.is_string()) return std::stoll(v.get<std::string>());
  throw std::runtime_error(std::string("field ") + field + " is not an integer");
}

std::optional<int64_t> json_opt_int(const json& j, const char* field) {
  if (!j.contains(field) || j.at(field).is_null()) return std::nullopt;
  return json_int(j, field);
}

/// Tags arrive either as a JSON array or the dump's "<a><b>" form.
std::vector<std::string> parse_tags(const json& j) {
  std::vector<std::string> tags;
  if (!j.contains("Tags") || j.at("Tags").is_null()) return tags;
  const auto& v = j.at("Tags");
  if (v.is_array()) {
    for (const auto& t : v) tags.push_back(t.get<std::string>());
    return tags;
  }
  const auto s = v.get<std::string>();
  size_t pos = 0;
  while ((pos = s.find('<', pos)) != std::string::npos) {
    const size_t end = s.find('>', pos);
    if (end == std::string::npos) break;
    if (end > pos + 1) tags.push_back(s.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return tags;
}

RawPost parse_post_line(const std::string& line) {
  const json j = json::parse(line);
  RawPost post;
  post.post_id = json_int(j, "Id");
  const int64_t type = json_int(j, "PostTypeId");
  post.post_type = type == 1 ? PostType::question : PostType::answer;
  post.accepted_answer_id = json_opt_int(j, "AcceptedAnswerId");
  post.parent_id = json_opt_int(j, "ParentId");
  post.tags = parse_tags(j);
  if (j.contains("Title") && j.at("Title").is_string()) {
    post.title = j.at("Title").get<std::string>();
  }
  if (j.contains("Body") && j.at("Body").is_string()) {
    post.body = j.at("Body").get<std::string>();
  }
  if (j.contains("Score") && !j.at("Score").is_null()) {
    post.score = static_cast<int>(json_int(j, "Score"));
  }
  return post;
}

}  // namespace

DumpParseResult parse_dump(std::istream& in, const ParseOptions& options) {
  DumpParseResult result;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    int64_t type;
    try {
      const json j = json::parse(line);
      type = json_int(j, "PostTypeId");
    } catch (const std::exception& e) {
      if (!options.skip_malformed) {
        throw std::runtime_error("dump parse error at line " +
                                 std::to_string(line_no) + ": " + e.what());
      }
      result.issues.push_back({line_no, e.what()});
      continue;
    }
    if (type != 1 && type != 2) continue;  // wiki/moderator post kinds
    try {
      result.posts.push_back(parse_post_line(line));
    } catch (const std::exception& e) {
      if (!options.skip_malformed) {
        throw std::runtime_error("dump parse error at line " +
                                 std::to_string(line_no) + ": " + e.what());
      }
      result.issues.push_back({line_no, e.what()});
    }
  }
  return result;
}

namespace {

/// Single-pass HTML entity decoding for the handful of entities the dump
/// escapes inside code blocks.
std::string decode_entities(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '&') {
      out.push_back(text[i++]);
      continue;
    }
    const size_t semi = text.find(';', i);
    if (semi == std::string::npos || semi - i > 10) {
      out.push_back(text[i++]);
      continue;
    }
    const std::string entity = text.substr(i + 1, semi - i - 1);
    if (entity == "lt") out.push_back('<');
    else if (entity == "gt") out.push_back('>');
    else if (entity == "amp") out.push_back('&');
    else if (entity == "quot") out.push_back('"');
    else if (entity == "apos") out.push_back('\'');
    else if (entity.size() > 1 && entity[0] == '#') {
      long code = 0;
      try {
        code = (entity[1] == 'x' || entity[1] == 'X')
                   ? std::stol(entity.substr(2), nullptr, 16)
                   : std::stol(entity.substr(1));
      } catch (const std::exception&) {
        out.push_back(text[i++]);
        continue;
      }
      if (code <= 0 || code > 0x10ffff) {
        out.push_back(text[i++]);
        continue;
      }
      // UTF-8 encode the code point.
      if (code < 0x80) {
        out.push_back(static_cast<char>(code));
      } else if (code < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (code >> 6)));
        out.push_back(static_cast<char>(0x80 | (code & 0x3f)));
      } else if (code < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (code >> 12)));
        out.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (code & 0x3f)));
      } else {
        out.push_back(static_cast<char>(0xf0 | (code >> 18)));
        out.push_back(static_cast<char>(0x80 | ((code >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((code >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (code & 0x3f)));
      }
    } else {
      out.push_back(text[i++]);
      continue;
    }
    i = semi + 1;
  }
  return out;
}

/// Finds "<name" at pos (case-insensitive, attributes allowed) and returns
/// the index just past its closing '>'; npos when it does not match.
size_t match_open_tag(const std::string& body, size_t pos, const std::string& name) {
  if (pos + name.size() + 1 > body.size() || body[pos] != '<') return std::string::npos;
  for (size_t i = 0; i < name.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(body[pos + 1 + i])) != name[i]) {
      return std::string::npos;
    }
  }
  size_t i = pos + 1 + name.size();
  if (i < body.size() && !(body[i] == '>' || std::isspace(static_cast<unsigned char>(body[i])))) {
    return std::string::npos;  // e.g. "<pres"
  }
  const size_t close = body.find('>', i);
  return close == std::string::npos ? std::string::npos : close + 1;
}

size_t find_close_tag(const std::string& body, size_t pos, const std::string& name) {
  const std::string needle = "</" + name;
  size_t i = pos;
  while ((i = body.find('<', i)) != std::string::npos) {
    if (i + needle.size() <= body.size()) {
      bool match = true;
      for (size_t k = 0; k < needle.size(); ++k) {
        if (std::tolower(static_cast<unsigned char>(body[i + k])) != needle[k]) {
          match = false;
          break;
        }
      }
      if (match) return i;
    }
    ++i;
  }
  return std::string::npos;
}

}  // namespace

std::string extract_code(const std::string& answer_body) {
  std::string out;
  bool first = true;
  size_t pos = 0;
  while ((pos = answer_body.find('<', pos)) != std::string::npos) {
    const size_t after_pre = match_open_tag(answer_body, pos, "pre");
    if (after_pre == std::string::npos) {
      ++pos;
      continue;
    }
    // Allow whitespace between <pre> and <code>.
    size_t inner = after_pre;
    while (inner < answer_body.size() &&
           std::isspace(static_cast<unsigned char>(answer_body[inner]))) {
      ++inner;
    }
    const size_t after_code = match_open_tag(answer_body, inner, "code");
    if (after_code == std::string::npos) {
      pos = after_pre;
      continue;
    }
    size_t end = find_close_tag(answer_body, after_code, "code");
    if (end == std::string::npos) end = answer_body.size();
    if (!first) out += '\n';
    out += decode_entities(answer_body.substr(after_code, end - after_code));
    first = false;
    pos = end;
  }
  return out;
}

namespace {

/// Newline-separated segments after trimming one trailing newline.
int line_count(const std::string& code) {
  if (code.empty()) return 0;
  std::string s = code;
  if (!s.empty() && s.back() == '\n') s.pop_back();
  if (s.empty()) return 0;
  return 1 + static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

std::vector<QueryCodePair> filter_pairs(const std::vector<RawPost>& posts,
                                        Lang lang,
                                        const FilterThresholds& thresholds,
                                        FilterCounters* counters) {
  FilterCounters local;
  FilterCounters& c = counters ? *counters : local;

  std::unordered_map<int64_t, const RawPost*> answers;
  std::vector<const RawPost*> questions;
  for (const auto& post : posts) {
    if (post.post_type == PostType::answer) {
      answers.emplace(post.post_id, &post);
    } else {
      questions.push_back(&post);
    }
  }
  std::sort(questions.begin(), questions.end(),
            [](const RawPost* a, const RawPost* b) { return a->post_id < b->post_id; });

  const std::string tag = lang_tag(lang);
  std::vector<QueryCodePair> pairs;
  for (const RawPost* q : questions) {
    // Tags are matched lowercased, by substring, so "javascript-framework"
    // and "python-3.6" count. Untitled questions cannot form a query.
    const bool tagged = std::any_of(
        q->tags.begin(), q->tags.end(),
        [&](const std::string& t) { return lower(t).find(tag) != std::string::npos; });
    if (!tagged || q->title.empty()) {
      ++c.rejected_tag;
      continue;
    }
    ++c.questions;

    const RawPost* answer = nullptr;
    if (q->accepted_answer_id) {
      auto it = answers.find(*q->accepted_answer_id);
      if (it != answers.end()) answer = it->second;
    }
    if (!answer) {
      ++c.rejected_no_accepted;
      continue;
    }
    ++c.with_accepted_answer;

    const std::string code = extract_code(answer->body);
    if (code.empty()) {
      ++c.rejected_no_snippet;
      continue;
    }
    ++c.with_code_snippet;

    if (q->score < thresholds.min_q_upvotes) {
      ++c.rejected_q_upvotes;
      continue;
    }
    if (answer->score < thresholds.min_a_upvotes) {
      ++c.rejected_a_upvotes;
      continue;
    }
    const int loc = line_count(code);
    if (loc < thresholds.min_loc) {
      ++c.rejected_loc;
      continue;
    }

    QueryCodePair pair;
    pair.id = q->post_id;
    pair.lang = lang;
    pair.query = q->title;
    pair.code = code;
    pair.q_upvotes = q->score;
    pair.a_upvotes = answer->score;
    pair.loc = loc;
    pairs.push_back(std::move(pair));
    ++c.final_pairs;
  }
  return pairs;
}

namespace {

/// Comment stripping works at the lexer level: walk the source once,
/// classifying comment spans while respecting string literals, and copy
/// everything that is not a comment.
struct StripState {
  const std::string& src;
  std::string out;
  bool clean = true;
  size_t i = 0;

  explicit StripState(const std::string& s) : src(s) { out.reserve(s.size()); }

  bool done() const { return i >= src.size(); }
  char cur() const { return src[i]; }
  char peek(size_t off = 1) const {
    return i + off < src.size() ? src[i + off] : '\0';
  }
  void copy() { out.push_back(src[i++]); }
  bool starts(const char* s) const {
    return src.compare(i, std::char_traits<char>::length(s), s) == 0;
  }
};

/// Copies a quoted literal (terminator `q`), honoring backslash escapes.
/// Returns false on an unterminated literal.
bool copy_string(StripState& st, char q, bool escapes = true) {
  st.copy();  // opening quote
  while (!st.done()) {
    if (escapes && st.cur() == '\\' && st.i + 1 < st.src.size()) {
      st.copy();
      st.copy();
      continue;
    }
    if (st.cur() == q) {
      st.copy();
      return true;
    }
    st.copy();
  }
  return false;
}

void skip_line_comment(StripState& st) {
  while (!st.done() && st.cur() != '\n') ++st.i;
}

bool skip_block_comment(StripState& st) {
  st.i += 2;  // "/*"
  while (!st.done()) {
    if (st.starts("*/")) {
      st.i += 2;
      return true;
    }
    ++st.i;
  }
  return false;
}

/// Decides whether a '/' begins a regex literal: true when the previous
/// significant token cannot end an expression.
bool js_slash_is_regex(const StripState& st) {
  size_t j = st.out.size();
  while (j > 0 && std::isspace(static_cast<unsigned char>(st.out[j - 1]))) --j;
  if (j == 0) return true;
  const char prev = st.out[j - 1];
  if (std::isalnum(static_cast<unsigned char>(prev)) || prev == '_' || prev == '$') {
    // Keywords like "return" still start an expression.
    size_t k = j;
    while (k > 0 && (std::isalnum(static_cast<unsigned char>(st.out[k - 1])) ||
                     st.out[k - 1] == '_' || st.out[k - 1] == '$')) {
      --k;
    }
    static const char* kExprKeywords[] = {"return", "typeof", "instanceof", "in",
                                          "of",     "new",    "delete",     "void",
                                          "throw",  "case",   "do",         "else"};
    const std::string word = st.out.substr(k, j - k);
    for (const char* kw : kExprKeywords) {
      if (word == kw) return true;
    }
    return false;
  }
  if (prev == ')' || prev == ']' || prev == '}') return false;
  return true;  // operator or punctuation: expression position
}

StripResult strip_c_family(const std::string& code, bool hash_comments,
                           bool backtick_strings, bool js_regex) {
  StripState st(code);
  while (!st.done()) {
    const char c = st.cur();
    if (c == '"' || c == '\'') {
      if (!copy_string(st, c)) st.clean = false;
    } else if (backtick_strings && c == '`') {
      if (!copy_string(st, '`')) st.clean = false;
    } else if (hash_comments && c == '#') {
      skip_line_comment(st);
    } else if (c == '/' && st.peek() == '/') {
      skip_line_comment(st);
    } else if (c == '/' && st.peek() == '*') {
      if (!skip_block_comment(st)) st.clean = false;
    } else if (js_regex && c == '/' && js_slash_is_regex(st)) {
      // Regex literal: copy to the unescaped closing slash on the same line.
      const size_t start = st.i;
      st.copy();
      bool closed = false;
      bool in_class = false;
      while (!st.done() && st.cur() != '\n') {
        if (st.cur() == '\\' && st.i + 1 < st.src.size()) {
          st.copy();
          st.copy();
          continue;
        }
        if (st.cur() == '[') in_class = true;
        if (st.cur() == ']') in_class = false;
        if (st.cur() == '/' && !in_class) {
          st.copy();
          closed = true;
          break;
        }
        st.copy();
      }
      if (!closed) {
        // Not a regex after all; leave what was copied and carry on.
        (void)start;
      }
    } else {
      st.copy();
    }
  }
  if (!st.clean) return {code, false};
  return {std::move(st.out), true};
}

StripResult strip_go(const std::string& code) {
  StripState st(code);
  while (!st.done()) {
    const char c = st.cur();
    if (c == '"' || c == '\'') {
      if (!copy_string(st, c)) st.clean = false;
    } else if (c == '`') {
      if (!copy_string(st, '`', /*escapes=*/false)) st.clean = false;
    } else if (c == '/' && st.peek() == '/') {
      skip_line_comment(st);
    } else if (c == '/' && st.peek() == '*') {
      if (!skip_block_comment(st)) st.clean = false;
    } else {
      st.copy();
    }
  }
  if (!st.clean) return {code, false};
  return {std::move(st.out), true};
}

StripResult strip_ruby(const std::string& code) {
  StripState st(code);
  bool at_line_start = true;
  while (!st.done()) {
    if (at_line_start && st.starts("=begin")) {
      const size_t end = st.src.find("\n=end", st.i);
      if (end == std::string::npos) {
        st.clean = false;
        break;
      }
      size_t after = st.src.find('\n', end + 1);
      st.i = after == std::string::npos ? st.src.size() : after;
      continue;
    }
    const char c = st.cur();
    at_line_start = (c == '\n');
    if (c == '"' || c == '\'') {
      if (!copy_string(st, c)) st.clean = false;
    } else if (c == '#') {
      skip_line_comment(st);
    } else {
      st.copy();
    }
  }
  if (!st.clean) return {code, false};
  return {std::move(st.out), true};
}

/// Python: '#' comments plus string statements (docstrings). A string
/// literal that is the entire logical line is dropped with its line.
StripResult strip_python(const std::string& code) {
  StripState st(code);

  auto copy_py_string = [&](bool* was_string) -> bool {
    *was_string = true;
    const char q = st.cur();
    if (st.starts("\"\"\"") || st.starts("'''")) {
      const std::string triple(3, q);
      const size_t start = st.i;
      const size_t end = st.src.find(triple, st.i + 3);
      if (end == std::string::npos) return false;
      st.out += st.src.substr(start, end + 3 - start);
      st.i = end + 3;
      return true;
    }
    return copy_string(st, q);
  };

  // First pass: remove '#' comments, tracking strings.
  while (!st.done()) {
    const char c = st.cur();
    if (c == '"' || c == '\'') {
      bool ignored;
      if (!copy_py_string(&ignored)) st.clean = false;
    } else if (c == '#') {
      skip_line_comment(st);
    } else {
      st.copy();
    }
  }
  if (!st.clean) return {code, false};

  // Second pass: drop lines that consist of a single string literal
  // (docstrings are string statements).
  std::istringstream lines(st.out);
  std::string assembled;
  std::string line;
  bool first = true;
  bool in_triple = false;
  std::string triple_quote;
  while (std::getline(lines, line)) {
    bool drop = false;
    if (in_triple) {
      drop = true;
      const size_t end = line.find(triple_quote);
      if (end != std::string::npos &&
          line.find_first_not_of(" \t\r", end + 3) == std::string::npos) {
        in_triple = false;
      }
    } else {
      const size_t begin = line.find_first_not_of(" \t\r");
      if (begin != std::string::npos &&
          (line[begin] == '"' || line[begin] == '\'')) {
        const char q = line[begin];
        const std::string triple(3, q);
        if (line.compare(begin, 3, triple) == 0) {
          const size_t end = line.find(triple, begin + 3);
          if (end == std::string::npos) {
            drop = true;
            in_triple = true;
            triple_quote = triple;
          } else if (line.find_first_not_of(" \t\r", end + 3) == std::string::npos) {
            drop = true;
          }
        } else {
          // Single-quoted string statement: literal must close on this line
          // and be followed by nothing.
          size_t j = begin + 1;
          bool closed = false;
          while (j < line.size()) {
            if (line[j] == '\\') {
              j += 2;
              continue;
            }
            if (line[j] == q) {
              closed = true;
              break;
            }
            ++j;
          }
          if (closed && line.find_first_not_of(" \t\r", j + 1) == std::string::npos) {
            drop = true;
          }
        }
      }
    }
    if (drop) continue;
    if (!first) assembled += '\n';
    assembled += line;
    first = false;
  }
  // getline drops a trailing newline; restore it when the source had one.
  if (!st.out.empty() && st.out.back() == '\n') assembled += '\n';
  return {std::move(assembled), true};
}

}  // namespace

StripResult strip_comments(const std::string& code, Lang lang) {
  switch (lang) {
    case Lang::js:
      return strip_c_family(code, /*hash=*/false, /*backtick=*/true, /*regex=*/true);
    case Lang::java:
      return strip_c_family(code, /*hash=*/false, /*backtick=*/false, /*regex=*/false);
    case Lang::php:
      return strip_c_family(code, /*hash=*/true, /*backtick=*/false, /*regex=*/false);
    case Lang::go:
      return strip_go(code);
    case Lang::ruby:
      return strip_ruby(code);
    case Lang::py:
      return strip_python(code);
  }
  throw std::invalid_argument("unknown language value");
}

std::vector<PretrainFunction> build_pretrain_functions(
    const std::vector<std::pair<int64_t, std::string>>& snippets, Lang lang) {
  std::vector<PretrainFunction> fns;
  fns.reserve(snippets.size());
  for (const auto& [id, code] : snippets) {
    PretrainFunction fn;
    fn.id = id;
    fn.lang = lang;
    fn.code = strip_comments(code, lang).code;
    fn.token_count = static_cast<int64_t>(pretokenize(fn.code, false).size());
    if (fn.token_count > 0) fns.push_back(std::move(fn));
  }
  return fns;
}

namespace {

/// Rebuilds per-fold train/val/test lists from (seed, k, assignments).
/// Validation items are chosen by a per-fold derived shuffle so that the
/// plan file alone reproduces the full split.
void derive_folds(FoldPlan& plan) {
  const size_t n = plan.assignments.size();
  plan.folds.assign(static_cast<size_t>(plan.k), {});
  for (int f = 0; f < plan.k; ++f) {
    auto& fold = plan.folds[static_cast<size_t>(f)];
    std::vector<size_t> remaining;
    for (size_t i = 0; i < n; ++i) {
      if (plan.assignments[i] == f) {
        fold.test.push_back(i);
      } else {
        remaining.push_back(i);
      }
    }
    const auto val_count = static_cast<size_t>(
        std::llround(0.1 * static_cast<double>(remaining.size())));
    Rng rng(mix_seed(plan.seed, static_cast<uint64_t>(f) + 1));
    rng.shuffle(remaining);
    fold.val.assign(remaining.begin(),
                    remaining.begin() + static_cast<long>(val_count));
    fold.train.assign(remaining.begin() + static_cast<long>(val_count),
                      remaining.end());
    std::sort(fold.val.begin(), fold.val.end());
    std::sort(fold.train.begin(), fold.train.end());
  }
}

}  // namespace

FoldPlan split_folds(size_t n_items, int k, uint64_t seed) {
  if (k < 2) throw std::invalid_argument("split_folds: k must be >= 2");
  if (n_items < static_cast<size_t>(k)) {
    throw std::invalid_argument("split_folds: need at least k items");
  }
  FoldPlan plan;
  plan.seed = seed;
  plan.k = k;
  plan.assignments.assign(n_items, 0);

  std::vector<size_t> order(n_items);
  for (size_t i = 0; i < n_items; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  // First n % k folds take one extra item.
  const size_t base = n_items / static_cast<size_t>(k);
  const size_t extra = n_items % static_cast<size_t>(k);
  size_t pos = 0;
  for (int f = 0; f < k; ++f) {
    const size_t size = base + (static_cast<size_t>(f) < extra ? 1 : 0);
    for (size_t j = 0; j < size; ++j) {
      plan.assignments[order[pos++]] = f;
    }
  }

  derive_folds(plan);
  return plan;
}

FoldPlan split_folds(const std::vector<QueryCodePair>& pairs, int k, uint64_t seed) {
  return split_folds(pairs.size(), k, seed);
}

void save_fold_plan(const FoldPlan& plan, const std::string& path) {
  json j;
  j["seed"] = plan.seed;
  j["k"] = plan.k;
  j["assignments"] = plan.assignments;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

FoldPlan load_fold_plan(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j;
  in >> j;
  FoldPlan plan;
  plan.seed = j.at("seed").get<uint64_t>();
  plan.k = j.at("k").get<int>();
  plan.assignments = j.at("assignments").get<std::vector<int>>();
  for (int a : plan.assignments) {
    if (a < 0 || a >= plan.k) {
      throw std::runtime_error("fold plan assignment out of range in " + path);
    }
  }
  derive_folds(plan);
  return plan;
}

void write_pairs_jsonl(const std::vector<QueryCodePair>& pairs, std::ostream& out) {
  for (const auto& p : pairs) {
    json j;
    j["id"] = p.id;
    j["lang"] = to_string(p.lang);
    j["query"] = p.query;
    j["code"] = p.code;
    j["q_upvotes"] = p.q_upvotes;
    j["a_upvotes"] = p.a_upvotes;
    out << j.dump() << '\n';
  }
}

std::vector<QueryCodePair> read_pairs_jsonl(std::istream& in) {
  std::vector<QueryCodePair> pairs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      QueryCodePair p;
      p.id = j.at("id").get<int64_t>();
      p.lang = lang_from_string(j.at("lang").get<std::string>());
      p.query = j.at("query").get<std::string>();
      p.code = j.at("code").get<std::string>();
      p.q_upvotes = j.at("q_upvotes").get<int>();
      p.a_upvotes = j.at("a_upvotes").get<int>();
      p.loc = line_count(p.code);
      pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw std::runtime_error("pair record error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

void write_pretrain_jsonl(const std::vector<PretrainFunction>& fns, std::ostream& out) {
  for (const auto& fn : fns) {
    json j;
    j["id"] = fn.id;
    j["lang"] = to_string(fn.lang);
    j["code"] = fn.code;
    out << j.dump() << '\n';
  }
}

std::vector<PretrainFunction> read_pretrain_jsonl(std::istream& in) {
  std::vector<PretrainFunction> fns;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PretrainFunction fn;
      fn.id = j.at("id").get<int64_t>();
      fn.lang = lang_from_string(j.at("lang").get<std::string>());
      fn.code = j.at("code").get<std::string>();
      fn.token_count = static_cast<int64_t>(pretokenize(fn.code, false).size());
      fns.push_back(std::move(fn));
    } catch (const std::exception& e) {
      throw std::runtime_error("function record error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return fns;
}

}  // namespace codesearch
