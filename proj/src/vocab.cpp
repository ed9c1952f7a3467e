#include "excom/vocab.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>

namespace excom {

namespace {
const char* kReserved[] = {"<pad>", "<unk>", "<s>", "</s>", "<OTHER>", "<none>"};
}

Vocabulary::Vocabulary() {
  for (const char* token : kReserved) add_token(token);
}

void Vocabulary::add_token(const std::string& token) {
  ids_.emplace(token, static_cast<std::int64_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<const TokenSeq*>& docs, std::size_t cap) {
  std::map<std::string, std::uint64_t> freq;
  for (const TokenSeq* doc : docs) {
    for (const auto& token : *doc) freq[token] += 1;
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [token, count] : ranked) {
    if (vocab.tokens_.size() >= cap + kReservedCount) break;
    if (vocab.ids_.count(token)) continue;  // reserved literal seen in data
    vocab.add_token(token);
  }
  return vocab;
}

std::int64_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || id >= size()) throw DataError("vocab: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> Vocabulary::encode(const TokenSeq& tokens) const {
  std::vector<std::int64_t> out;
  out.reserve(tokens.size());
  for (const auto& token : tokens) out.push_back(id(token));
  return out;
}

TokenSeq Vocabulary::decode(const std::vector<std::int64_t>& ids) const {
  TokenSeq out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(token(id));
  return out;
}

void Vocabulary::save(std::ostream& out) const {
  out << (tokens_.size() - kReservedCount) << '\n';
  for (std::size_t i = kReservedCount; i < tokens_.size(); ++i) {
    out << tokens_[i] << '\n';
  }
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::size_t count = 0;
  in >> count;
  in.ignore();
  Vocabulary vocab;
  std::string line;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw DataError("vocab: truncated table");
    vocab.add_token(line);
  }
  return vocab;
}

}  // namespace excom
