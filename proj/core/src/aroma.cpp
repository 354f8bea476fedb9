#include "codesearch/aroma.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

namespace codesearch {

namespace {

// --- lexer -----------------------------------------------------------------

struct Token {
  std::string text;
  std::string kind;  // ident, kw, num, str, punct
  int line = 0;
  int indent = 0;  // indentation of the line the token starts
};

const std::set<std::string>& keywords(Lang lang) {
  static const std::set<std::string> js = {
      "var", "let", "const", "function", "return", "if", "else", "for",
      "while", "do", "new", "typeof", "instanceof", "in", "of", "class",
      "extends", "import", "export", "try", "catch", "finally", "throw",
      "switch", "case", "break", "continue", "default", "null", "true",
      "false", "undefined", "this", "async", "await", "yield", "delete",
      "void", "with", "static", "get", "set"};
  static const std::set<std::string> java = {
      "public", "private", "protected", "static", "final", "void", "int",
      "long", "double", "float", "boolean", "char", "byte", "short", "class",
      "interface", "extends", "implements", "return", "if", "else", "for",
      "while", "do", "new", "try", "catch", "finally", "throw", "throws",
      "switch", "case", "break", "continue", "default", "null", "true",
      "false", "this", "super", "package", "import", "abstract",
      "synchronized", "volatile", "transient", "native", "enum",
      "instanceof", "assert", "String"};
  static const std::set<std::string> py = {
      "def", "return", "if", "elif", "else", "for", "while", "import",
      "from", "as", "class", "try", "except", "finally", "raise", "with",
      "lambda", "pass", "break", "continue", "global", "nonlocal", "del",
      "yield", "assert", "in", "is", "not", "and", "or", "None", "True",
      "False", "async", "await"};
  switch (lang) {
    case Lang::js: return js;
    case Lang::java: return java;
    case Lang::py: return py;
    default: throw std::invalid_argument("aroma: unsupported language");
  }
}

bool ident_char(unsigned char c) {
  return std::isalnum(c) || c == '_' || c == '$' || c >= 0x80;
}

/// Error-tolerant lexer shared by all three grammars: comments dropped,
/// strings folded into single tokens, unterminated literals closed at the
/// line end.
std::vector<Token> lex(const std::string& code, Lang lang) {
  const auto& kw = keywords(lang);
  std::vector<Token> tokens;
  int line = 1;
  int indent = 0;
  bool measuring_indent = true;
  size_t i = 0;
  const size_t n = code.size();

  auto push = [&](std::string text, const char* kind) {
    tokens.push_back({std::move(text), kind, line, indent});
  };

  while (i < n) {
    const char c = code[i];
    if (c == '\n') {
      ++line;
      indent = 0;
      measuring_indent = true;
      ++i;
      continue;
    }
    if (c == ' ' || c == '\t' || c == '\r') {
      if (measuring_indent && c != '\r') indent += (c == '\t') ? 4 : 1;
      ++i;
      continue;
    }
    measuring_indent = false;

    // Comments.
    if (lang == Lang::py && c == '#') {
      while (i < n && code[i] != '\n') ++i;
      continue;
    }
    if (lang != Lang::py && c == '/' && i + 1 < n) {
      if (code[i + 1] == '/') {
        while (i < n && code[i] != '\n') ++i;
        continue;
      }
      if (code[i + 1] == '*') {
        i += 2;
        while (i + 1 < n && !(code[i] == '*' && code[i + 1] == '/')) {
          if (code[i] == '\n') ++line;
          ++i;
        }
        i = std::min(n, i + 2);
        continue;
      }
    }

    // Strings (incl. Python triple quotes and JS template literals).
    if (c == '"' || c == '\'' || (lang == Lang::js && c == '`')) {
      std::string text;
      if (lang == Lang::py && i + 2 < n && code[i + 1] == c && code[i + 2] == c) {
        const std::string triple(3, c);
        size_t end = code.find(triple, i + 3);
        if (end == std::string::npos) end = n;
        text = code.substr(i, std::min(n, end + 3) - i);
        line += static_cast<int>(std::count(text.begin(), text.end(), '\n'));
        i = std::min(n, end + 3);
      } else {
        size_t j = i + 1;
        while (j < n && code[j] != c && code[j] != '\n') {
          if (code[j] == '\\' && j + 1 < n) ++j;
          ++j;
        }
        const size_t end = (j < n && code[j] == c) ? j + 1 : j;
        text = code.substr(i, end - i);
        i = end;
      }
      push(std::move(text), "str");
      continue;
    }

    if (std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < n && (std::isalnum(static_cast<unsigned char>(code[j])) ||
                       code[j] == '.' || code[j] == '_')) {
        ++j;
      }
      push(code.substr(i, j - i), "num");
      i = j;
      continue;
    }

    if (ident_char(static_cast<unsigned char>(c)) &&
        !std::isdigit(static_cast<unsigned char>(c))) {
      size_t j = i;
      while (j < n && ident_char(static_cast<unsigned char>(code[j]))) ++j;
      std::string word = code.substr(i, j - i);
      push(std::move(word), kw.count(code.substr(i, j - i)) ? "kw" : "ident");
      i = j;
      continue;
    }

    push(std::string(1, c), "punct");
    ++i;
  }
  return tokens;
}

// --- tree builder ----------------------------------------------------------

struct TreeBuilder {
  SimplifiedTree tree;
  const std::vector<Token>& tokens;
  size_t pos = 0;

  explicit TreeBuilder(const std::vector<Token>& t, Lang lang) : tokens(t) {
    tree.lang = lang;
  }

  int make(const std::string& kind, const std::string& token = "") {
    tree.nodes.push_back({kind, token, {}});
    return static_cast<int>(tree.nodes.size()) - 1;
  }

  void attach(int parent, int child) {
    tree.nodes[static_cast<size_t>(parent)].children.push_back(child);
  }

  int leaf(const Token& t) { return make(t.kind, t.text); }

  bool done() const { return pos >= tokens.size(); }
  const Token& cur() const { return tokens[pos]; }
  const Token* prev() const { return pos > 0 ? &tokens[pos - 1] : nullptr; }

  /// Expression-level grouping: calls, parenthesized groups, bracket
  /// subscripts. Consumes one token or one balanced group; returns the node.
  int parse_atom(const char* stop_chars) {
    const Token& t = cur();
    if (t.kind == "punct" && (t.text == "(" || t.text == "[")) {
      const bool paren = t.text == "(";
      const std::string closer = paren ? ")" : "]";
      const Token* p = prev();
      const bool is_call = paren && p && (p->kind == "ident" || p->kind == "kw");
      const int group = make(is_call ? "args" : (paren ? "group" : "index"));
      attach(group, leaf(t));
      ++pos;
      while (!done() && !(cur().kind == "punct" && cur().text == closer)) {
        // A closer for an outer scope means this group is unterminated.
        if (cur().kind == "punct" &&
            (cur().text == ")" || cur().text == "]" || cur().text == "}")) {
          break;
        }
        attach(group, parse_atom(closer.c_str()));
      }
      if (!done() && cur().kind == "punct" && cur().text == closer) {
        attach(group, leaf(cur()));
        ++pos;
      } else {
        tree.nodes[static_cast<size_t>(group)].kind = "error";
      }
      return group;
    }
    (void)stop_chars;
    const int node = leaf(t);
    ++pos;
    return node;
  }
};

/// Brace-structured build (js, java): statements end at ';', blocks nest
/// at '{'...'}'. Unbalanced braces degrade into error nodes.
struct BraceBuilder : TreeBuilder {
  using TreeBuilder::TreeBuilder;

  int parse_block(bool top_level) {
    const int block = make(top_level ? "module" : "block");
    int stmt = -1;
    auto open_stmt = [&] {
      if (stmt < 0) {
        stmt = make("stmt");
        attach(block, stmt);
      }
    };
    while (!done()) {
      const Token& t = cur();
      if (t.kind == "punct" && t.text == "}") {
        if (top_level) {
          // Stray closer: keep the token, mark the spot.
          open_stmt();
          const int err = make("error");
          attach(err, leaf(t));
          attach(stmt, err);
          ++pos;
          stmt = -1;
          continue;
        }
        return block;
      }
      if (t.kind == "punct" && t.text == "{") {
        open_stmt();
        attach(stmt, leaf(t));
        ++pos;
        const int inner = parse_block(false);
        attach(stmt, inner);
        if (!done() && cur().kind == "punct" && cur().text == "}") {
          attach(stmt, leaf(cur()));
          ++pos;
        } else {
          tree.nodes[static_cast<size_t>(inner)].kind = "error";
        }
        stmt = -1;
        continue;
      }
      if (t.kind == "punct" && t.text == ";") {
        open_stmt();
        attach(stmt, leaf(t));
        ++pos;
        stmt = -1;
        continue;
      }
      open_stmt();
      const int call_holder = maybe_call(stmt);
      (void)call_holder;
    }
    return block;
  }

  /// Wraps "ident (" into a call node; otherwise appends one atom.
  int maybe_call(int stmt) {
    const Token& t = cur();
    if ((t.kind == "ident" || t.kind == "kw") && pos + 1 < tokens.size() &&
        tokens[pos + 1].kind == "punct" && tokens[pos + 1].text == "(") {
      const int call = make("call");
      attach(call, leaf(t));
      ++pos;
      attach(call, parse_atom(")"));
      attach(stmt, call);
      return call;
    }
    const int atom = parse_atom("");
    attach(stmt, atom);
    return atom;
  }
};

/// Indentation-structured build (py): a line ending in ':' opens a suite
/// holding the following deeper-indented lines.
struct IndentBuilder : TreeBuilder {
  using TreeBuilder::TreeBuilder;

  /// Lines grouped by physical line number; bracket continuation folds
  /// follow-up lines into the same logical line.
  struct LogicalLine {
    std::vector<Token> tokens;
    int indent = 0;
  };

  std::vector<LogicalLine> split_lines() {
    std::vector<LogicalLine> lines;
    int depth = 0;
    int last_line = -1;
    for (const auto& t : tokens) {
      const bool continuation = depth > 0;
      if (t.line != last_line && !continuation) {
        lines.push_back({{}, t.indent});
      }
      if (lines.empty()) lines.push_back({{}, t.indent});
      lines.back().tokens.push_back(t);
      last_line = t.line;
      if (t.kind == "punct") {
        if (t.text == "(" || t.text == "[" || t.text == "{") ++depth;
        if (t.text == ")" || t.text == "]" || t.text == "}") {
          depth = std::max(0, depth - 1);
        }
      }
    }
    return lines;
  }

  int build() {
    const auto lines = split_lines();
    const int module = make("module");
    size_t idx = 0;
    build_suite(module, lines, &idx, -1);
    return module;
  }

  void build_suite(int parent, const std::vector<LogicalLine>& lines,
                   size_t* idx, int parent_indent) {
    while (*idx < lines.size()) {
      const auto& line = lines[*idx];
      if (line.indent <= parent_indent) return;
      const int stmt = make("stmt");
      attach(parent, stmt);
      emit_line(stmt, line);
      const bool opens_suite =
          !line.tokens.empty() && line.tokens.back().kind == "punct" &&
          line.tokens.back().text == ":";
      ++*idx;
      if (opens_suite && *idx < lines.size() &&
          lines[*idx].indent > line.indent) {
        const int block = make("block");
        attach(stmt, block);
        build_suite(block, lines, idx, line.indent);
      }
    }
  }

  void emit_line(int stmt, const LogicalLine& line) {
    // Reuse the shared atom parser over this line's token window.
    BraceBuilder inner(line.tokens, tree.lang);
    const int mod = inner.parse_block(true);
    // Graft: copy the inner stmt children (skip its module/stmt shells).
    graft(stmt, inner.tree, mod);
  }

  void graft(int dst, const SimplifiedTree& src, int src_node) {
    for (int child : src.nodes[static_cast<size_t>(src_node)].children) {
      const auto& n = src.nodes[static_cast<size_t>(child)];
      if (n.kind == "stmt") {
        graft(dst, src, child);
      } else {
        attach(dst, copy_node(src, child));
      }
    }
  }

  int copy_node(const SimplifiedTree& src, int src_node) {
    const auto& n = src.nodes[static_cast<size_t>(src_node)];
    const int id = make(n.kind, n.token);
    for (int child : n.children) {
      attach(id, copy_node(src, child));
    }
    return id;
  }
};

}  // namespace

SimplifiedTree parse_code(const std::string& code, Lang lang) {
  if (lang != Lang::js && lang != Lang::java && lang != Lang::py) {
    throw std::invalid_argument("parse_code: unsupported language " +
                                to_string(lang));
  }
  const auto tokens = lex(code, lang);
  if (lang == Lang::py) {
    IndentBuilder builder(tokens, lang);
    builder.tree.root = builder.build();
    return std::move(builder.tree);
  }
  BraceBuilder builder(tokens, lang);
  builder.tree.root = builder.parse_block(true);
  return std::move(builder.tree);
}

namespace {

void serialize_node(const SimplifiedTree& t, int i, std::string* out) {
  const auto& n = t.nodes[static_cast<size_t>(i)];
  if (n.children.empty() && !n.token.empty()) {
    *out += n.kind;
    *out += ':';
    for (char c : n.token) {
      if (c == '\\' || c == '(' || c == ')' || c == ' ') *out += '\\';
      *out += c;
    }
    return;
  }
  *out += '(';
  *out += n.kind;
  for (int child : n.children) {
    *out += ' ';
    serialize_node(t, child, out);
  }
  *out += ')';
}

}  // namespace

std::string SimplifiedTree::serialize() const {
  if (root < 0) return "()";
  std::string out;
  serialize_node(*this, root, &out);
  return out;
}

int64_t FeatureBag::total() const {
  int64_t sum = 0;
  for (const auto& [f, c] : counts) sum += c;
  return sum;
}

void FeatureBag::add(const std::string& feature, int n) { counts[feature] += n; }

std::string FeatureBag::serialize() const {
  std::string out;
  for (const auto& [f, c] : counts) {
    out += f;
    out += '\t';
    out += std::to_string(c);
    out += '\n';
  }
  return out;
}

namespace {

struct LeafInfo {
  const SimplifiedTree::Node* node;
  std::vector<std::string> ancestors;  // nearest first
  bool is_variable = false;
};

void collect_leaves(const SimplifiedTree& t, int i,
                    std::vector<std::string>* ancestors,
                    std::vector<LeafInfo>* leaves) {
  const auto& n = t.nodes[static_cast<size_t>(i)];
  if (n.children.empty()) {
    if (!n.token.empty()) leaves->push_back({&n, *ancestors, false});
    return;
  }
  ancestors->insert(ancestors->begin(), n.kind);
  for (int child : n.children) collect_leaves(t, child, ancestors, leaves);
  ancestors->erase(ancestors->begin());
}

}  // namespace

FeatureBag extract_features(const SimplifiedTree& tree) {
  FeatureBag bag;
  if (tree.root < 0 || tree.nodes.empty()) return bag;

  std::vector<LeafInfo> leaves;
  std::vector<std::string> ancestors;
  collect_leaves(tree, tree.root, &ancestors, &leaves);

  // A variable is an identifier not invoked (next leaf "(") and not a
  // member access (previous leaf ".").
  for (size_t i = 0; i < leaves.size(); ++i) {
    if (leaves[i].node->kind != "ident") continue;
    const bool called = i + 1 < leaves.size() && leaves[i + 1].node->token == "(";
    const bool member = i > 0 && leaves[i - 1].node->token == ".";
    leaves[i].is_variable = !called && !member;
  }

  // Leaf text with variable names abstracted; used by every family except
  // plain token features, which keep the concrete name.
  auto abstracted = [&](size_t i) -> std::string {
    return leaves[i].is_variable ? "#VAR" : leaves[i].node->token;
  };

  for (size_t i = 0; i < leaves.size(); ++i) {
    const auto& leaf = leaves[i];
    bag.add("tok:" + leaf.node->token);

    std::string chain;
    const size_t depth = std::min<size_t>(3, leaf.ancestors.size());
    for (size_t a = 0; a < depth; ++a) {
      if (a) chain += ',';
      chain += leaf.ancestors[a];
    }
    bag.add("par:" + abstracted(i) + "|" + chain);

    if (i + 1 < leaves.size()) {
      bag.add("sib:" + abstracted(i) + "|" + abstracted(i + 1));
    }

    if (leaf.is_variable) {
      const std::string before = i > 0 ? abstracted(i - 1) : "^";
      const std::string after = i + 1 < leaves.size() ? abstracted(i + 1) : "$";
      bag.add("var:" + before + "|" + after);
    }
  }
  return bag;
}

int64_t overlap(const FeatureBag& a, const FeatureBag& b) {
  // Iterate the smaller bag.
  const FeatureBag& small = a.counts.size() <= b.counts.size() ? a : b;
  const FeatureBag& large = a.counts.size() <= b.counts.size() ? b : a;
  int64_t sum = 0;
  for (const auto& [f, c] : small.counts) {
    auto it = large.counts.find(f);
    if (it != large.counts.end()) sum += std::min(c, it->second);
  }
  return sum;
}

double aroma_score_bags(const FeatureBag& true_bag, size_t chosen_index,
                        const std::vector<FeatureBag>& pool_bags) {
  if (pool_bags.size() < 2) {
    throw std::invalid_argument("aroma_score: pool must have >= 2 candidates");
  }
  if (chosen_index >= pool_bags.size()) {
    throw std::invalid_argument("aroma_score: chosen candidate outside pool");
  }

  std::vector<int64_t> overlaps;
  overlaps.reserve(pool_bags.size());
  for (const auto& bag : pool_bags) overlaps.push_back(overlap(true_bag, bag));

  // Average ranks, ascending (1-based): higher overlap, higher rank.
  const size_t n = overlaps.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return overlaps[a] < overlaps[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && overlaps[order[j]] == overlaps[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }

  const auto [min_it, max_it] = std::minmax_element(ranks.begin(), ranks.end());
  if (*max_it == *min_it) return 0.5;  // all overlaps equal
  return (ranks[chosen_index] - *min_it) / (*max_it - *min_it);
}

double aroma_score(const std::string& true_code, const std::string& chosen_code,
                   const std::vector<std::string>& pool, Lang lang) {
  if (pool.size() < 2) {
    throw std::invalid_argument("aroma_score: pool must have >= 2 candidates");
  }
  size_t chosen_index = pool.size();
  for (size_t i = 0; i < pool.size(); ++i) {
    if (pool[i] == chosen_code) {
      chosen_index = i;
      break;
    }
  }
  if (chosen_index == pool.size()) {
    throw std::invalid_argument("aroma_score: chosen candidate outside pool");
  }

  const FeatureBag true_bag = extract_features(parse_code(true_code, lang));
  std::vector<FeatureBag> pool_bags;
  pool_bags.reserve(pool.size());
  for (const auto& code : pool) {
    pool_bags.push_back(extract_features(parse_code(code, lang)));
  }
  return aroma_score_bags(true_bag, chosen_index, pool_bags);
}

}  // namespace codesearch
