#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "excom/common.hpp"

namespace excom {

/// Token table with reserved control ids. Out-of-vocabulary tokens map to UNK.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;
  static constexpr std::int64_t kBos = 2;
  static constexpr std::int64_t kEos = 3;
  static constexpr std::int64_t kOther = 4;
  static constexpr std::int64_t kNone = 5;
  static constexpr std::int64_t kReservedCount = 6;

  Vocabulary();

  /// Keeps the cap most frequent tokens; ties broken lexicographically so the
  /// table is reproducible.
  static Vocabulary build(const std::vector<const TokenSeq*>& docs, std::size_t cap);

  std::int64_t id(const std::string& token) const;
  const std::string& token(std::int64_t id) const;
  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }

  std::vector<std::int64_t> encode(const TokenSeq& tokens) const;
  TokenSeq decode(const std::vector<std::int64_t>& ids) const;

  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);

 private:
  void add_token(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> ids_;
};

}  // namespace excom
