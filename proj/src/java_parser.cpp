#include "excom/java_parser.hpp"

#include <array>
#include <cctype>
#include <unordered_set>

namespace excom {

const char* category_name(AstCategory category) {
  switch (category) {
    case AstCategory::MethodDeclaration: return "MethodDeclaration";
    case AstCategory::Modifier: return "Modifier";
    case AstCategory::Type: return "Type";
    case AstCategory::TypeName: return "TypeName";
    case AstCategory::Name: return "Name";
    case AstCategory::Parameter: return "Parameter";
    case AstCategory::Throws: return "Throws";
    case AstCategory::Block: return "Block";
    case AstCategory::If: return "If";
    case AstCategory::While: return "While";
    case AstCategory::For: return "For";
    case AstCategory::Return: return "Return";
    case AstCategory::VarDecl: return "VarDecl";
    case AstCategory::Assign: return "Assign";
    case AstCategory::Call: return "Call";
    case AstCategory::FieldAccess: return "FieldAccess";
    case AstCategory::ArrayIndex: return "ArrayIndex";
    case AstCategory::BinaryExpr: return "BinaryExpr";
    case AstCategory::Unary: return "Unary";
    case AstCategory::New: return "New";
    case AstCategory::Cast: return "Cast";
    case AstCategory::Literal: return "Literal";
    case AstCategory::Operator: return "Operator";
    case AstCategory::GenericStatement: return "GenericStatement";
  }
  return "Unknown";
}

std::size_t node_count(const AstNode& root) {
  std::size_t n = 1;
  for (const auto& child : root.children) n += node_count(child);
  return n;
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

namespace {

bool ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
bool ident_part(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

const std::array<const char*, 22> kMultiCharOps = {
    ">>>=", ">>>", ">>=", "<<=", "->", "::", "++", "--", "<<", ">>", "<=",
    ">=",   "==",  "!=",  "&&",  "||", "+=", "-=", "*=", "/=", "%=", "^=",
};

}  // namespace

std::vector<SourceToken> tokenize_source(const std::string& source) {
  std::vector<SourceToken> tokens;
  std::size_t i = 0;
  const std::size_t n = source.size();
  while (i < n) {
    char c = source[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && source[i + 1] == '/') {
      while (i < n && source[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < n && source[i + 1] == '*') {
      std::size_t end = source.find("*/", i + 2);
      i = end == std::string::npos ? n : end + 2;
      continue;
    }
    std::size_t start = i;
    if (c == '"' || c == '\'') {
      char quote = c;
      ++i;
      bool closed = false;
      while (i < n) {
        if (source[i] == '\\' && i + 1 < n) {
          i += 2;
          continue;
        }
        if (source[i] == quote) {
          ++i;
          closed = true;
          break;
        }
        if (source[i] == '\n') break;
        ++i;
      }
      if (!closed) {
        throw ParseError(quote == '"' ? "unterminated string literal"
                                      : "unterminated char literal",
                         start);
      }
      tokens.push_back({quote == '"' ? SourceToken::Kind::String
                                     : SourceToken::Kind::Char,
                        source.substr(start, i - start), start});
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      ++i;
      if (c == '0' && i < n && (source[i] == 'x' || source[i] == 'X')) {
        ++i;
        while (i < n && std::isxdigit(static_cast<unsigned char>(source[i]))) ++i;
      } else {
        while (i < n && (std::isdigit(static_cast<unsigned char>(source[i])) ||
                         source[i] == '.')) {
          ++i;
        }
        if (i < n && (source[i] == 'e' || source[i] == 'E')) {
          std::size_t save = i++;
          if (i < n && (source[i] == '+' || source[i] == '-')) ++i;
          if (i < n && std::isdigit(static_cast<unsigned char>(source[i]))) {
            while (i < n && std::isdigit(static_cast<unsigned char>(source[i]))) ++i;
          } else {
            i = save;  // not an exponent
          }
        }
      }
      if (i < n && (source[i] == 'f' || source[i] == 'F' || source[i] == 'l' ||
                    source[i] == 'L' || source[i] == 'd' || source[i] == 'D')) {
        ++i;
      }
      tokens.push_back({SourceToken::Kind::Number, source.substr(start, i - start), start});
      continue;
    }
    if (ident_start(c)) {
      ++i;
      while (i < n && ident_part(source[i])) ++i;
      tokens.push_back({SourceToken::Kind::Identifier, source.substr(start, i - start), start});
      continue;
    }
    bool matched = false;
    for (const char* op : kMultiCharOps) {
      std::size_t len = std::char_traits<char>::length(op);
      if (source.compare(i, len, op) == 0) {
        tokens.push_back({SourceToken::Kind::Operator, op, start});
        i += len;
        matched = true;
        break;
      }
    }
    if (matched) continue;
    static const std::string punct = "(){}[];,.@";
    if (punct.find(c) != std::string::npos) {
      tokens.push_back({SourceToken::Kind::Punct, std::string(1, c), start});
    } else {
      tokens.push_back({SourceToken::Kind::Operator, std::string(1, c), start});
    }
    ++i;
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Recursive-descent parser
// ---------------------------------------------------------------------------

namespace {

const std::unordered_set<std::string> kModifiers = {
    "public", "private",   "protected", "static",   "final",    "abstract",
    "native", "transient", "volatile",  "strictfp", "default",  "synchronized",
};

const std::unordered_set<std::string> kPrimitives = {
    "void", "int", "long", "short", "byte", "char", "boolean", "float", "double",
};

// Keywords that can never open a type or plain name expression.
const std::unordered_set<std::string> kReservedWords = {
    "if", "else", "while", "for", "return", "new", "throws", "instanceof",
};

AstNode leaf(AstCategory category, std::string value) {
  return AstNode{category, std::move(value), {}};
}

AstNode node(AstCategory category, std::vector<AstNode> children = {}) {
  return AstNode{category, "", std::move(children)};
}

class Parser {
 public:
  explicit Parser(std::vector<SourceToken> tokens) : toks_(std::move(tokens)) {}

  AstNode parse() {
    try {
      return parse_header_and_body();
    } catch (ExprFail&) {
      throw ParseError("unsupported method header",
                       at_end() ? last_offset() : cur().offset);
    }
  }

 private:
  struct ExprFail {};

  AstNode parse_header_and_body() {
    AstNode method = node(AstCategory::MethodDeclaration);
    parse_annotations_and_modifiers(method.children);
    // Generic type parameters of the method itself degrade to a token bag.
    if (is_op("<")) method.children.push_back(angle_group_fallback());

    // Either "type name(" or a constructor "Name(".
    std::size_t mark = pos_;
    AstNode type = parse_type();
    if (is_ident() && peek_is("(", 1)) {
      method.children.push_back(std::move(type));
      method.children.push_back(leaf(AstCategory::Name, advance().text));
    } else if (is_punct("(") && type.is_leaf() && type.category == AstCategory::Type) {
      method.children.push_back(leaf(AstCategory::Name, type.value));  // constructor
    } else {
      throw ParseError("expected method name", offset_at(mark));
    }

    expect_punct("(");
    while (!is_punct(")")) {
      if (at_end()) throw ParseError("unterminated parameter list", last_offset());
      method.children.push_back(parse_parameter());
      if (is_punct(",")) advance();
    }
    expect_punct(")");
    while (is_punct("[")) {  // archaic "int f()[]" return dims
      advance();
      expect_punct("]");
    }
    if (is_kw("throws")) {
      advance();
      AstNode throws = node(AstCategory::Throws);
      while (is_ident()) {
        throws.children.push_back(leaf(AstCategory::Name, advance().text));
        if (is_punct(".") || is_punct(",")) advance();
        else break;
      }
      method.children.push_back(std::move(throws));
    }
    if (is_punct(";")) {
      advance();  // abstract or native: no body
    } else if (is_punct("{")) {
      method.children.push_back(parse_block());
    } else {
      throw ParseError("expected method body", last_offset());
    }
    return method;
  }

  // --- token cursor ---
  bool at_end() const { return pos_ >= toks_.size(); }
  const SourceToken& cur() const { return toks_[pos_]; }
  const SourceToken& advance() { return toks_[pos_++]; }
  bool peek_is(const std::string& text, std::size_t ahead = 0) const {
    return pos_ + ahead < toks_.size() && toks_[pos_ + ahead].text == text;
  }
  bool is_ident() const {
    return !at_end() && cur().kind == SourceToken::Kind::Identifier;
  }
  bool is_kw(const std::string& kw) const { return is_ident() && cur().text == kw; }
  bool is_punct(const std::string& p) const {
    return !at_end() && cur().kind == SourceToken::Kind::Punct && cur().text == p;
  }
  bool is_op(const std::string& op) const {
    return !at_end() && cur().kind == SourceToken::Kind::Operator && cur().text == op;
  }
  std::size_t offset_at(std::size_t index) const {
    return index < toks_.size() ? toks_[index].offset : last_offset();
  }
  std::size_t last_offset() const {
    return toks_.empty() ? 0 : toks_.back().offset + toks_.back().text.size();
  }
  void expect_punct(const std::string& p) {
    if (!is_punct(p)) {
      throw ParseError("expected '" + p + "'", at_end() ? last_offset() : cur().offset);
    }
    advance();
  }

  // --- header pieces ---
  void parse_annotations_and_modifiers(std::vector<AstNode>& out) {
    while (!at_end()) {
      if (is_punct("@")) {
        advance();
        if (!is_ident()) throw ParseError("expected annotation name", last_offset());
        out.push_back(leaf(AstCategory::Modifier, advance().text));
        if (is_punct("(")) out.push_back(balanced_group_fallback("(", ")"));
      } else if (is_ident() && kModifiers.count(cur().text)) {
        out.push_back(leaf(AstCategory::Modifier, advance().text));
      } else {
        break;
      }
    }
  }

  // Consumes a balanced token group, returning its contents as a flat token bag.
  AstNode balanced_group_fallback(const std::string& open, const std::string& close) {
    expect_punct(open);
    AstNode bag = node(AstCategory::GenericStatement);
    int depth = 1;
    while (!at_end()) {
      if (is_punct(open)) ++depth;
      if (is_punct(close) && --depth == 0) {
        advance();
        return bag;
      }
      bag.children.push_back(token_leaf(advance()));
    }
    throw ParseError("unterminated '" + open + "' group", last_offset());
  }

  AstNode angle_group_fallback() {
    // '<...>' of method type parameters; '>' may arrive fused as ">>".
    advance();  // '<'
    AstNode bag = node(AstCategory::GenericStatement);
    int depth = 1;
    while (!at_end() && depth > 0) {
      if (is_op("<")) {
        ++depth;
      } else if (is_op(">")) {
        --depth;
      } else if (is_op(">>")) {
        depth -= 2;
      } else if (is_op(">>>")) {
        depth -= 3;
      }
      const SourceToken& t = advance();
      if (depth > 0) bag.children.push_back(token_leaf(t));
    }
    return bag;
  }

  static AstNode token_leaf(const SourceToken& t) {
    switch (t.kind) {
      case SourceToken::Kind::Identifier:
        return leaf(AstCategory::Name, t.text);
      case SourceToken::Kind::Number:
      case SourceToken::Kind::String:
      case SourceToken::Kind::Char:
        return leaf(AstCategory::Literal, t.text);
      default:
        return leaf(AstCategory::Operator, t.text);
    }
  }

  // Type := segment ('.' segment)* generic-args? dims?
  // A single-segment, argument-free type stays a valued leaf; anything richer
  // becomes an interior Type node over TypeName leaves and argument types.
  AstNode parse_type() {
    if (!is_ident() || kModifiers.count(cur().text) || kReservedWords.count(cur().text)) {
      throw ExprFail{};
    }
    std::vector<std::string> segments;
    segments.push_back(advance().text);
    while (is_punct(".") && pos_ + 1 < toks_.size() &&
           toks_[pos_ + 1].kind == SourceToken::Kind::Identifier) {
      advance();
      segments.push_back(advance().text);
    }
    std::vector<AstNode> args;
    bool has_args = false;
    if (is_op("<") && !kPrimitives.count(segments.back())) {
      has_args = true;
      advance();
      pending_closes_ = 0;
      while (true) {
        args.push_back(parse_type());
        if (is_punct(",")) {
          advance();
          continue;
        }
        if (consume_close_angle()) break;
        throw ExprFail{};
      }
    }
    while (is_punct("[") && peek_is("]", 1)) {
      advance();
      advance();
    }
    if (segments.size() == 1 && !has_args) {
      return leaf(AstCategory::Type, segments[0]);
    }
    AstNode type = node(AstCategory::Type);
    for (auto& s : segments) type.children.push_back(leaf(AstCategory::TypeName, s));
    for (auto& a : args) type.children.push_back(std::move(a));
    return type;
  }

  // Handles '>' fused into '>>'/'>>>' when nested generic arguments close.
  bool consume_close_angle() {
    if (pending_closes_ > 0) {
      --pending_closes_;
      return true;
    }
    if (is_op(">")) {
      advance();
      return true;
    }
    if (is_op(">>")) {
      advance();
      pending_closes_ = 1;
      return true;
    }
    if (is_op(">>>")) {
      advance();
      pending_closes_ = 2;
      return true;
    }
    return false;
  }

  AstNode parse_parameter() {
    AstNode param = node(AstCategory::Parameter);
    while (is_ident() && kModifiers.count(cur().text)) {
      param.children.push_back(leaf(AstCategory::Modifier, advance().text));
    }
    param.children.push_back(parse_type());
    // varargs ellipsis arrives as three '.' tokens
    while (is_punct(".")) advance();
    if (!is_ident()) throw ParseError("expected parameter name", last_offset());
    param.children.push_back(leaf(AstCategory::Name, advance().text));
    while (is_punct("[") && peek_is("]", 1)) {
      advance();
      advance();
    }
    return param;
  }

  // --- statements ---
  AstNode parse_block() {
    std::size_t open = at_end() ? 0 : cur().offset;
    expect_punct("{");
    AstNode block = node(AstCategory::Block);
    while (!is_punct("}")) {
      if (at_end()) throw ParseError("unbalanced braces", open);
      block.children.push_back(parse_statement());
    }
    advance();
    return block;
  }

  AstNode parse_statement() {
    if (is_punct("{")) return parse_block();
    if (is_punct(";")) {
      advance();
      return node(AstCategory::GenericStatement);
    }
    std::size_t mark = pos_;
    try {
      if (is_kw("if")) return parse_if();
      if (is_kw("while")) return parse_while();
      if (is_kw("for")) return parse_for();
      if (is_kw("return")) return parse_return();
      return parse_var_decl_or_expr_statement();
    } catch (ExprFail&) {
      pos_ = mark;
      return parse_generic_statement();
    }
  }

  AstNode parse_if() {
    advance();
    if (!is_punct("(")) throw ExprFail{};
    advance();
    AstNode cond = parse_expression();
    expect_paren_close();
    AstNode stmt = node(AstCategory::If);
    stmt.children.push_back(std::move(cond));
    stmt.children.push_back(parse_statement());
    if (is_kw("else")) {
      advance();
      stmt.children.push_back(parse_statement());
    }
    return stmt;
  }

  AstNode parse_while() {
    advance();
    if (!is_punct("(")) throw ExprFail{};
    advance();
    AstNode cond = parse_expression();
    expect_paren_close();
    AstNode stmt = node(AstCategory::While);
    stmt.children.push_back(std::move(cond));
    stmt.children.push_back(parse_statement());
    return stmt;
  }

  AstNode parse_for() {
    advance();
    if (!is_punct("(")) throw ExprFail{};
    advance();
    // Enhanced form: for (type name : expr) body
    std::size_t mark = pos_;
    try {
      AstNode type = parse_type();
      if (!is_ident()) throw ExprFail{};
      AstNode name = leaf(AstCategory::Name, advance().text);
      if (!is_op(":")) throw ExprFail{};
      advance();
      AstNode range = parse_expression();
      expect_paren_close();
      AstNode stmt = node(AstCategory::For);
      stmt.children.push_back(std::move(type));
      stmt.children.push_back(std::move(name));
      stmt.children.push_back(std::move(range));
      stmt.children.push_back(parse_statement());
      return stmt;
    } catch (ExprFail&) {
      pos_ = mark;
    }
    // Classic form: for (init? ; cond? ; update?) body
    AstNode stmt = node(AstCategory::For);
    if (!is_punct(";")) stmt.children.push_back(parse_for_init());
    if (!is_punct(";")) throw ExprFail{};
    advance();
    if (!is_punct(";")) stmt.children.push_back(parse_expression());
    if (!is_punct(";")) throw ExprFail{};
    advance();
    if (!is_punct(")")) stmt.children.push_back(parse_expression());
    expect_paren_close();
    stmt.children.push_back(parse_statement());
    return stmt;
  }

  AstNode parse_for_init() {
    std::size_t mark = pos_;
    try {
      return parse_var_decl(false);
    } catch (ExprFail&) {
      pos_ = mark;
    }
    return parse_expression();
  }

  AstNode parse_return() {
    advance();
    AstNode stmt = node(AstCategory::Return);
    if (!is_punct(";")) stmt.children.push_back(parse_expression());
    if (!is_punct(";")) throw ExprFail{};
    advance();
    return stmt;
  }

  AstNode parse_var_decl_or_expr_statement() {
    std::size_t mark = pos_;
    try {
      return parse_var_decl(true);
    } catch (ExprFail&) {
      pos_ = mark;
    }
    AstNode expr = parse_expression();
    if (!is_punct(";")) throw ExprFail{};
    advance();
    return expr;
  }

  // consume_semicolon=false is the for-init form, which stops before ';'.
  AstNode parse_var_decl(bool consume_semicolon) {
    AstNode decl = node(AstCategory::VarDecl);
    while (is_kw("final")) {
      decl.children.push_back(leaf(AstCategory::Modifier, advance().text));
    }
    AstNode type = parse_type();
    if (!is_ident()) throw ExprFail{};
    decl.children.push_back(std::move(type));
    while (true) {
      if (!is_ident()) throw ExprFail{};
      decl.children.push_back(leaf(AstCategory::Name, advance().text));
      while (is_punct("[") && peek_is("]", 1)) {
        advance();
        advance();
      }
      if (is_op("=")) {
        decl.children.push_back(leaf(AstCategory::Operator, advance().text));
        decl.children.push_back(parse_expression());
      }
      if (is_punct(",")) {
        advance();
        continue;
      }
      break;
    }
    if (consume_semicolon) {
      if (!is_punct(";")) throw ExprFail{};
      advance();
    }
    return decl;
  }

  // Unsupported statement: swallow a token run, ending at ';' on balance or at
  // the closing brace of an enclosing block. Balanced brace groups (try/catch
  // bodies and similar) are swallowed whole, continuing through chained
  // keywords such as catch/finally/else.
  AstNode parse_generic_statement() {
    AstNode stmt = node(AstCategory::GenericStatement);
    int paren = 0, bracket = 0, brace = 0;
    bool saw_brace_group = false;
    while (!at_end()) {
      if (paren == 0 && bracket == 0 && brace == 0) {
        if (is_punct(";")) {
          advance();
          return stmt;
        }
        if (is_punct("}")) return stmt;
        if (saw_brace_group && !is_kw("catch") && !is_kw("finally") &&
            !is_kw("else") && !is_kw("while")) {
          return stmt;
        }
      }
      const SourceToken& t = advance();
      if (t.kind == SourceToken::Kind::Punct) {
        if (t.text == "(") ++paren;
        else if (t.text == ")") --paren;
        else if (t.text == "[") ++bracket;
        else if (t.text == "]") --bracket;
        else if (t.text == "{") ++brace;
        else if (t.text == "}") {
          --brace;
          if (brace == 0) saw_brace_group = true;
          if (brace < 0) throw ParseError("unbalanced braces", t.offset);
        }
      }
      stmt.children.push_back(token_leaf(t));
    }
    return stmt;
  }

  void expect_paren_close() {
    if (!is_punct(")")) throw ExprFail{};
    advance();
  }

  // --- expressions ---
  AstNode parse_expression() { return parse_assignment(); }

  AstNode parse_assignment() {
    AstNode lhs = parse_binary(0);
    static const std::unordered_set<std::string> kAssignOps = {
        "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
    };
    if (!at_end() && cur().kind == SourceToken::Kind::Operator &&
        kAssignOps.count(cur().text)) {
      AstNode op = leaf(AstCategory::Operator, advance().text);
      AstNode rhs = parse_assignment();  // right associative
      return node(AstCategory::Assign, make_children(std::move(lhs), std::move(op), std::move(rhs)));
    }
    return lhs;
  }

  static std::vector<AstNode> make_children(AstNode a, AstNode b, AstNode c) {
    std::vector<AstNode> v;
    v.push_back(std::move(a));
    v.push_back(std::move(b));
    v.push_back(std::move(c));
    return v;
  }

  int binary_level(const std::string& op) const {
    if (op == "||") return 1;
    if (op == "&&") return 2;
    if (op == "|") return 3;
    if (op == "^") return 4;
    if (op == "&") return 5;
    if (op == "==" || op == "!=") return 6;
    if (op == "<" || op == ">" || op == "<=" || op == ">=") return 7;
    if (op == "<<" || op == ">>" || op == ">>>") return 8;
    if (op == "+" || op == "-") return 9;
    if (op == "*" || op == "/" || op == "%") return 10;
    return 0;
  }

  AstNode parse_binary(int min_level) {
    AstNode lhs = parse_unary();
    while (!at_end()) {
      if (is_kw("instanceof") && 7 > min_level) {
        AstNode op = leaf(AstCategory::Operator, advance().text);
        AstNode rhs = parse_type();
        lhs = node(AstCategory::BinaryExpr,
                   make_children(std::move(lhs), std::move(op), std::move(rhs)));
        continue;
      }
      if (cur().kind != SourceToken::Kind::Operator) break;
      int level = binary_level(cur().text);
      if (level == 0 || level <= min_level) break;
      AstNode op = leaf(AstCategory::Operator, advance().text);
      AstNode rhs = parse_binary(level);
      lhs = node(AstCategory::BinaryExpr,
                 make_children(std::move(lhs), std::move(op), std::move(rhs)));
    }
    return lhs;
  }

  AstNode parse_unary() {
    if (!at_end() && cur().kind == SourceToken::Kind::Operator &&
        (cur().text == "!" || cur().text == "-" || cur().text == "+" ||
         cur().text == "~" || cur().text == "++" || cur().text == "--")) {
      AstNode op = leaf(AstCategory::Operator, advance().text);
      AstNode operand = parse_unary();
      AstNode expr = node(AstCategory::Unary);
      expr.children.push_back(std::move(op));
      expr.children.push_back(std::move(operand));
      return expr;
    }
    if (is_punct("(")) {
      std::size_t mark = pos_;
      if (try_parse_cast()) {
        pos_ = mark;
        advance();
        AstNode type = parse_type();
        expect_paren_close();
        AstNode operand = parse_unary();
        AstNode expr = node(AstCategory::Cast);
        expr.children.push_back(std::move(type));
        expr.children.push_back(std::move(operand));
        return parse_postfix(std::move(expr));
      }
    }
    return parse_postfix(parse_primary());
  }

  // A parenthesized bare type counts as a cast when a cast target follows.
  bool try_parse_cast() {
    std::size_t mark = pos_;
    bool ok = false;
    advance();  // '('
    try {
      AstNode type = parse_type();
      if (is_punct(")")) {
        advance();
        bool primitive = type.is_leaf() && kPrimitives.count(type.value) > 0;
        bool operand_follows =
            !at_end() && (is_ident() || is_punct("(") ||
                          cur().kind == SourceToken::Kind::Number ||
                          cur().kind == SourceToken::Kind::String ||
                          cur().kind == SourceToken::Kind::Char ||
                          (primitive && (is_op("-") || is_op("!") || is_op("~"))));
        ok = operand_follows && (primitive || !type.is_leaf() || looks_like_type_name(type.value));
      }
    } catch (ExprFail&) {
      ok = false;
    }
    pos_ = mark;
    return ok;
  }

  static bool looks_like_type_name(const std::string& name) {
    return !name.empty() && name[0] >= 'A' && name[0] <= 'Z';
  }

  AstNode parse_postfix(AstNode target) {
    while (!at_end()) {
      if (is_punct(".") && pos_ + 1 < toks_.size() &&
          toks_[pos_ + 1].kind == SourceToken::Kind::Identifier) {
        advance();
        AstNode member = leaf(AstCategory::Name, advance().text);
        AstNode access = node(AstCategory::FieldAccess);
        access.children.push_back(std::move(target));
        access.children.push_back(std::move(member));
        target = std::move(access);
        continue;
      }
      if (is_punct("(")) {
        AstNode call = node(AstCategory::Call);
        call.children.push_back(std::move(target));
        parse_arguments(call.children);
        target = std::move(call);
        continue;
      }
      if (is_punct("[")) {
        advance();
        AstNode index = parse_expression();
        if (!is_punct("]")) throw ExprFail{};
        advance();
        AstNode access = node(AstCategory::ArrayIndex);
        access.children.push_back(std::move(target));
        access.children.push_back(std::move(index));
        target = std::move(access);
        continue;
      }
      if (is_op("++") || is_op("--")) {
        AstNode expr = node(AstCategory::Unary);
        expr.children.push_back(std::move(target));
        expr.children.push_back(leaf(AstCategory::Operator, advance().text));
        target = std::move(expr);
        continue;
      }
      break;
    }
    return target;
  }

  void parse_arguments(std::vector<AstNode>& out) {
    expect_call_paren();
    if (is_punct(")")) {
      advance();
      return;
    }
    while (true) {
      out.push_back(parse_expression());
      if (is_punct(",")) {
        advance();
        continue;
      }
      if (is_punct(")")) {
        advance();
        return;
      }
      throw ExprFail{};
    }
  }

  void expect_call_paren() {
    if (!is_punct("(")) throw ExprFail{};
    advance();
  }

  AstNode parse_primary() {
    if (at_end()) throw ExprFail{};
    const SourceToken& t = cur();
    switch (t.kind) {
      case SourceToken::Kind::Number:
      case SourceToken::Kind::String:
      case SourceToken::Kind::Char:
        return leaf(AstCategory::Literal, advance().text);
      case SourceToken::Kind::Identifier: {
        if (t.text == "true" || t.text == "false" || t.text == "null") {
          return leaf(AstCategory::Literal, advance().text);
        }
        if (t.text == "new") return parse_new();
        if (kModifiers.count(t.text) || kReservedWords.count(t.text)) throw ExprFail{};
        return leaf(AstCategory::Name, advance().text);
      }
      case SourceToken::Kind::Punct:
        if (t.text == "(") {
          advance();
          AstNode inner = parse_expression();
          expect_paren_close();
          return inner;
        }
        throw ExprFail{};
      default:
        throw ExprFail{};
    }
  }

  AstNode parse_new() {
    advance();  // 'new'
    AstNode expr = node(AstCategory::New);
    expr.children.push_back(parse_type());
    if (is_punct("(")) {
      parse_arguments(expr.children);
      return expr;
    }
    if (is_punct("[")) {
      while (is_punct("[")) {
        advance();
        if (!is_punct("]")) expr.children.push_back(parse_expression());
        if (!is_punct("]")) throw ExprFail{};
        advance();
      }
      return expr;
    }
    throw ExprFail{};
  }

  std::vector<SourceToken> toks_;
  std::size_t pos_ = 0;
  int pending_closes_ = 0;
};

}  // namespace

AstNode parse_method(const std::string& source) {
  return Parser(tokenize_source(source)).parse();
}

// ---------------------------------------------------------------------------
// Structure-based traversal
// ---------------------------------------------------------------------------

namespace {

void sbt_walk(const AstNode& n, bool erase_values, TokenSeq& out) {
  std::string label = category_name(n.category);
  if (n.is_leaf() && !n.value.empty()) {
    label += "_";
    label += erase_values ? "<OTHER>" : n.value;
  }
  out.push_back("(");
  out.push_back(label);
  for (const auto& child : n.children) sbt_walk(child, erase_values, out);
  out.push_back(")");
  out.push_back(label);
}

}  // namespace

TokenSeq sbt(const AstNode& root) {
  TokenSeq out;
  out.reserve(4 * node_count(root));
  sbt_walk(root, false, out);
  return out;
}

TokenSeq sbt_ao(const AstNode& root) {
  TokenSeq out;
  out.reserve(4 * node_count(root));
  sbt_walk(root, true, out);
  return out;
}

TokenSeq sbt_to_ao(const TokenSeq& sbt_tokens) {
  TokenSeq out;
  out.reserve(sbt_tokens.size());
  for (const auto& token : sbt_tokens) {
    std::size_t underscore = token.find('_');
    if (underscore == std::string::npos) {
      out.push_back(token);
    } else {
      out.push_back(token.substr(0, underscore) + "_<OTHER>");
    }
  }
  return out;
}

}  // namespace excom
