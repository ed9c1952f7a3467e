#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "excom/bm25.hpp"
#include "excom/common.hpp"
#include "excom/corpus.hpp"

namespace excom {

/// Sorted term list with document frequencies over a training corpus.
struct TermTable {
  std::vector<std::string> terms;
  std::unordered_map<std::string, std::int64_t> index;
  std::vector<std::uint64_t> df;
  std::uint64_t doc_count = 0;

  static TermTable build(const std::vector<Sample>& train);
  /// tf * ln(N / df) over known terms; unknown terms are dropped.
  std::vector<std::pair<std::int64_t, double>> tfidf(const TokenSeq& tokens) const;
  /// Raw term counts over known terms.
  std::vector<std::pair<std::int64_t, double>> counts(const TokenSeq& tokens) const;
};

struct RankedDoc {
  std::uint64_t doc_id;
  double similarity;
};

/// TF-IDF vectors compared by cosine; the comment of the nearest neighbor.
class VsmRetriever {
 public:
  static VsmRetriever fit(const std::vector<Sample>& train);

  TokenSeq retrieve_comment(const TokenSeq& query_code,
                            std::optional<std::uint64_t> exclude_id = std::nullopt) const;
  /// Every document with its cosine similarity, sorted desc then by id.
  std::vector<RankedDoc> rank(const TokenSeq& query_code) const;

  const TermTable& table() const { return table_; }

 private:
  TermTable table_;
  std::vector<std::uint64_t> doc_ids_;
  std::vector<std::vector<std::pair<std::int64_t, double>>> doc_vectors_;
  std::vector<double> doc_norms_;
  std::vector<TokenSeq> comments_;
};

/// Latent semantic indexing: rank-d left singular basis of the term-document
/// TF-IDF matrix, computed by seeded randomized subspace iteration; documents
/// and queries are compared by cosine in the projected space.
class LsiRetriever {
 public:
  static LsiRetriever fit(const std::vector<Sample>& train, std::int64_t dim,
                          std::uint64_t seed);

  TokenSeq retrieve_comment(const TokenSeq& query_code,
                            std::optional<std::uint64_t> exclude_id = std::nullopt) const;
  std::vector<RankedDoc> rank(const TokenSeq& query_code) const;

  std::int64_t dim() const { return dim_; }
  /// Projection of an arbitrary token sequence into the d-space.
  std::vector<double> project(const TokenSeq& tokens) const;
  /// Stored projection of training document j (column of U_d^T X).
  const std::vector<double>& doc_projection(std::size_t j) const { return projections_[j]; }
  const std::vector<std::uint64_t>& doc_ids() const { return doc_ids_; }

 private:
  TermTable table_;
  std::int64_t dim_ = 0;
  std::vector<double> basis_;  // [terms x dim], row-major
  std::vector<std::uint64_t> doc_ids_;
  std::vector<std::vector<double>> projections_;
  std::vector<TokenSeq> comments_;
};

/// Bag-of-words cosine shortlist of size k, re-ranked by sentence BLEU of the
/// candidate code against the query code.
class NnGenRetriever {
 public:
  static NnGenRetriever fit(const std::vector<Sample>& train, std::int64_t k = 5);

  TokenSeq retrieve_comment(const TokenSeq& query_code,
                            std::optional<std::uint64_t> exclude_id = std::nullopt) const;

  std::int64_t k() const { return k_; }

 private:
  TermTable table_;
  std::int64_t k_ = 5;
  std::vector<std::uint64_t> doc_ids_;
  std::vector<std::vector<std::pair<std::int64_t, double>>> doc_vectors_;
  std::vector<double> doc_norms_;
  std::vector<TokenSeq> codes_;
  std::vector<TokenSeq> comments_;
};

/// The exemplar itself as the prediction: comment of the top BM25 hit.
TokenSeq retrieve_only(const Bm25Index& index, const std::vector<Sample>& corpus,
                       const Sample& query, bool exclude_self);

}  // namespace excom
