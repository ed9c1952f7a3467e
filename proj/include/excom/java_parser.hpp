#pragma once

#include <memory>
#include <string>
#include <vector>

#include "excom/common.hpp"

namespace excom {

enum class AstCategory {
  MethodDeclaration,
  Modifier,
  Type,
  TypeName,
  Name,
  Parameter,
  Throws,
  Block,
  If,
  While,
  For,
  Return,
  VarDecl,
  Assign,
  Call,
  FieldAccess,
  ArrayIndex,
  BinaryExpr,
  Unary,
  New,
  Cast,
  Literal,
  Operator,
  GenericStatement,
};

const char* category_name(AstCategory category);

/// Ordered tree; only leaves (no children) carry a value.
struct AstNode {
  AstCategory category;
  std::string value;  // empty for interior nodes
  std::vector<AstNode> children;

  bool is_leaf() const { return children.empty(); }
};

std::size_t node_count(const AstNode& root);

struct SourceToken {
  enum class Kind { Identifier, Number, String, Char, Operator, Punct };
  Kind kind;
  std::string text;
  std::size_t offset;  // byte offset into the source
};

/// Splits Java-like source into identifiers, literals, operators and
/// punctuation. Comments and whitespace are dropped. Throws ParseError on an
/// unterminated string or character literal.
std::vector<SourceToken> tokenize_source(const std::string& source);

/// Recursive-descent parse of a single method declaration. Statements outside
/// the supported grammar become GenericStatement nodes that keep every token
/// as a leaf, so malformed bodies degrade instead of failing. Throws
/// ParseError on unbalanced braces or a missing method header.
AstNode parse_method(const std::string& source);

/// Structure-based traversal: each node contributes "(", label, its children,
/// ")", label. Labels are the category name, with "_" + value appended for
/// valued leaves.
TokenSeq sbt(const AstNode& root);

/// SBT with every valued label's value replaced by <OTHER>; structure-only view.
TokenSeq sbt_ao(const AstNode& root);

/// Rewrites an already emitted SBT sequence to its SBT-AO form.
TokenSeq sbt_to_ao(const TokenSeq& sbt_tokens);

}  // namespace excom
