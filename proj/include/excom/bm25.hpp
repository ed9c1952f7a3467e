#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "excom/common.hpp"
#include "excom/corpus.hpp"

namespace excom {

/// Token sequence standing in for an exemplar when retrieval finds nothing.
inline const TokenSeq kEmptyExemplar = {"<none>"};

struct Posting {
  std::uint64_t doc_id;
  std::uint32_t term_freq;
};

/// Immutable BM25 inverted index over code token sequences. Document ids are
/// the sample ids, so tie-breaks and self-exclusion work on identity.
class Bm25Index {
 public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  /// Builds from (id, tokens) pairs; throws DataError on an empty corpus.
  static Bm25Index build(const std::vector<Sample>& samples);
  static Bm25Index build(const std::vector<std::pair<std::uint64_t, TokenSeq>>& docs);

  std::uint64_t doc_count() const { return doc_len_.size(); }
  double avg_len() const { return avg_len_; }
  std::uint64_t doc_freq(const std::string& term) const;
  bool contains(std::uint64_t doc_id) const { return doc_len_.count(doc_id) > 0; }

  /// BM25 with IDF(t) = ln(1 + (N - df + 0.5)/(df + 0.5)); duplicated query
  /// terms contribute once. Terms or documents unknown to the index add 0.
  double score(const TokenSeq& query_tokens, std::uint64_t doc_id) const;

  struct Result {
    std::uint64_t doc_id;
    double score;
    std::uint32_t rank;  // 1-based
  };

  /// Top-k by descending score, ties by ascending doc id; exclude_id never
  /// appears in the result. Fewer than k results when the corpus is small.
  std::vector<Result> retrieve(const TokenSeq& query_tokens, std::size_t k,
                               std::optional<std::uint64_t> exclude_id = std::nullopt) const;

  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;
  static Bm25Index load(std::istream& in);
  static Bm25Index load_file(const std::string& path);

  const std::map<std::string, std::vector<Posting>>& postings() const { return postings_; }
  const std::map<std::uint64_t, std::uint32_t>& doc_lengths() const { return doc_len_; }

 private:
  std::map<std::string, std::vector<Posting>> postings_;  // sorted by doc id
  std::map<std::uint64_t, std::uint32_t> doc_len_;
  double avg_len_ = 0.0;
};

struct ExemplarPair {
  std::uint64_t query_id = 0;
  std::int64_t similar_id = -1;  // -1: no document shared a term
  double score = 0.0;
  TokenSeq exemplar_tokens;      // comment of similar_id, or kEmptyExemplar
};

/// One exemplar per query sample: the top BM25 hit's comment. Training-set
/// queries exclude themselves so the exemplar is a genuine neighbor.
std::vector<ExemplarPair> pair_exemplars(const std::vector<Sample>& queries,
                                         const Bm25Index& index,
                                         const std::vector<Sample>& corpus,
                                         bool exclude_self);

void write_pairs(std::ostream& out, const std::vector<ExemplarPair>& pairs);
void save_pairs(const std::string& path, const std::vector<ExemplarPair>& pairs);
std::vector<ExemplarPair> read_pairs(std::istream& in);
std::vector<ExemplarPair> load_pairs(const std::string& path);

}  // namespace excom
