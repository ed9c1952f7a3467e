#include "excom/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "excom/bleu.hpp"

namespace excom {

TermTable TermTable::build(const std::vector<Sample>& train) {
  TermTable table;
  table.doc_count = train.size();
  std::map<std::string, std::uint64_t> df_map;
  for (const auto& sample : train) {
    std::map<std::string, bool> seen;
    for (const auto& token : sample.code_tokens) {
      if (!seen[token]) {
        seen[token] = true;
        df_map[token] += 1;
      }
    }
  }
  table.terms.reserve(df_map.size());
  for (const auto& [term, df] : df_map) {
    table.index[term] = static_cast<std::int64_t>(table.terms.size());
    table.terms.push_back(term);
    table.df.push_back(df);
  }
  return table;
}

namespace {

std::vector<std::pair<std::int64_t, double>> term_counts(const TermTable& table,
                                                         const TokenSeq& tokens) {
  std::map<std::int64_t, double> acc;
  for (const auto& token : tokens) {
    auto it = table.index.find(token);
    if (it != table.index.end()) acc[it->second] += 1.0;
  }
  return {acc.begin(), acc.end()};
}

double norm_of(const std::vector<std::pair<std::int64_t, double>>& v) {
  double sq = 0.0;
  for (const auto& [idx, w] : v) sq += w * w;
  return std::sqrt(sq);
}

double dot_sparse(const std::vector<std::pair<std::int64_t, double>>& a,
                  const std::vector<std::pair<std::int64_t, double>>& b) {
  double total = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first == b[j].first) {
      total += a[i].second * b[j].second;
      ++i;
      ++j;
    } else if (a[i].first < b[j].first) {
      ++i;
    } else {
      ++j;
    }
  }
  return total;
}

double cosine(const std::vector<std::pair<std::int64_t, double>>& a, double norm_a,
              const std::vector<std::pair<std::int64_t, double>>& b, double norm_b) {
  if (norm_a <= 0.0 || norm_b <= 0.0) return 0.0;
  return dot_sparse(a, b) / (norm_a * norm_b);
}

std::vector<RankedDoc> sort_ranked(std::vector<RankedDoc> ranked) {
  std::sort(ranked.begin(), ranked.end(), [](const RankedDoc& a, const RankedDoc& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.doc_id < b.doc_id;
  });
  return ranked;
}

}  // namespace

std::vector<std::pair<std::int64_t, double>> TermTable::tfidf(const TokenSeq& tokens) const {
  auto counts = term_counts(*this, tokens);
  for (auto& [idx, weight] : counts) {
    double idf = std::log(static_cast<double>(doc_count) /
                          static_cast<double>(df[static_cast<std::size_t>(idx)]));
    weight *= idf;
  }
  return counts;
}

std::vector<std::pair<std::int64_t, double>> TermTable::counts(const TokenSeq& tokens) const {
  return term_counts(*this, tokens);
}

// ---------------------------------------------------------------------------
// VSM
// ---------------------------------------------------------------------------

VsmRetriever VsmRetriever::fit(const std::vector<Sample>& train) {
  if (train.empty()) throw DataError("vsm: empty training corpus");
  VsmRetriever model;
  model.table_ = TermTable::build(train);
  for (const auto& sample : train) {
    model.doc_ids_.push_back(sample.id);
    model.doc_vectors_.push_back(model.table_.tfidf(sample.code_tokens));
    model.doc_norms_.push_back(norm_of(model.doc_vectors_.back()));
    model.comments_.push_back(sample.comment_tokens);
  }
  return model;
}

std::vector<RankedDoc> VsmRetriever::rank(const TokenSeq& query_code) const {
  auto query = table_.tfidf(query_code);
  double query_norm = norm_of(query);
  std::vector<RankedDoc> ranked;
  ranked.reserve(doc_ids_.size());
  for (std::size_t j = 0; j < doc_ids_.size(); ++j) {
    ranked.push_back({doc_ids_[j], cosine(query, query_norm, doc_vectors_[j], doc_norms_[j])});
  }
  return sort_ranked(std::move(ranked));
}

TokenSeq VsmRetriever::retrieve_comment(const TokenSeq& query_code,
                                        std::optional<std::uint64_t> exclude_id) const {
  for (const auto& r : rank(query_code)) {
    if (exclude_id && r.doc_id == *exclude_id) continue;
    for (std::size_t j = 0; j < doc_ids_.size(); ++j) {
      if (doc_ids_[j] == r.doc_id) return comments_[j];
    }
  }
  return kEmptyExemplar;
}

// ---------------------------------------------------------------------------
// LSI
// ---------------------------------------------------------------------------

namespace {

// Column-major dense helpers for the factorization; sizes here are desk scale.
struct Dense {
  std::int64_t rows = 0, cols = 0;
  std::vector<double> a;  // column-major

  Dense() = default;
  Dense(std::int64_t r, std::int64_t c) : rows(r), cols(c), a(static_cast<std::size_t>(r * c), 0.0) {}
  double& at(std::int64_t r, std::int64_t c) { return a[static_cast<std::size_t>(c * rows + r)]; }
  double at(std::int64_t r, std::int64_t c) const { return a[static_cast<std::size_t>(c * rows + r)]; }
};

Dense multiply(const Dense& x, const Dense& y) {
  Dense out(x.rows, y.cols);
  for (std::int64_t c = 0; c < y.cols; ++c) {
    for (std::int64_t k = 0; k < x.cols; ++k) {
      double f = y.at(k, c);
      if (f == 0.0) continue;
      for (std::int64_t r = 0; r < x.rows; ++r) out.at(r, c) += x.at(r, k) * f;
    }
  }
  return out;
}

Dense transpose_multiply(const Dense& x, const Dense& y) {  // x^T * y
  Dense out(x.cols, y.cols);
  for (std::int64_t c = 0; c < y.cols; ++c) {
    for (std::int64_t r = 0; r < x.cols; ++r) {
      double s = 0.0;
      for (std::int64_t k = 0; k < x.rows; ++k) s += x.at(k, r) * y.at(k, c);
      out.at(r, c) = s;
    }
  }
  return out;
}

// Modified Gram-Schmidt; numerically dead columns become zero vectors.
void orthonormalize_columns(Dense& m) {
  for (std::int64_t c = 0; c < m.cols; ++c) {
    for (std::int64_t prev = 0; prev < c; ++prev) {
      double proj = 0.0;
      for (std::int64_t r = 0; r < m.rows; ++r) proj += m.at(r, c) * m.at(r, prev);
      for (std::int64_t r = 0; r < m.rows; ++r) m.at(r, c) -= proj * m.at(r, prev);
    }
    double norm = 0.0;
    for (std::int64_t r = 0; r < m.rows; ++r) norm += m.at(r, c) * m.at(r, c);
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      for (std::int64_t r = 0; r < m.rows; ++r) m.at(r, c) = 0.0;
    } else {
      for (std::int64_t r = 0; r < m.rows; ++r) m.at(r, c) /= norm;
    }
  }
}

// Cyclic Jacobi eigensolver for a symmetric matrix; eigenpairs sorted by
// descending eigenvalue.
void symmetric_eigen(Dense m, std::vector<double>& eigenvalues, Dense& eigenvectors) {
  const std::int64_t n = m.rows;
  eigenvectors = Dense(n, n);
  for (std::int64_t i = 0; i < n; ++i) eigenvectors.at(i, i) = 1.0;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
    }
    if (off < 1e-24) break;
    for (std::int64_t p = 0; p < n; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        double apq = m.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::int64_t r = 0; r < n; ++r) {
          double mrp = m.at(r, p), mrq = m.at(r, q);
          m.at(r, p) = c * mrp - s * mrq;
          m.at(r, q) = s * mrp + c * mrq;
        }
        for (std::int64_t col = 0; col < n; ++col) {
          double mpc = m.at(p, col), mqc = m.at(q, col);
          m.at(p, col) = c * mpc - s * mqc;
          m.at(q, col) = s * mpc + c * mqc;
        }
        for (std::int64_t r = 0; r < n; ++r) {
          double vrp = eigenvectors.at(r, p), vrq = eigenvectors.at(r, q);
          eigenvectors.at(r, p) = c * vrp - s * vrq;
          eigenvectors.at(r, q) = s * vrp + c * vrq;
        }
      }
    }
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](std::int64_t a, std::int64_t b) { return m.at(a, a) > m.at(b, b); });
  eigenvalues.resize(static_cast<std::size_t>(n));
  Dense sorted(n, n);
  for (std::int64_t c = 0; c < n; ++c) {
    eigenvalues[static_cast<std::size_t>(c)] = m.at(order[static_cast<std::size_t>(c)],
                                                    order[static_cast<std::size_t>(c)]);
    for (std::int64_t r = 0; r < n; ++r) {
      sorted.at(r, c) = eigenvectors.at(r, order[static_cast<std::size_t>(c)]);
    }
  }
  eigenvectors = std::move(sorted);
}

double dense_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

LsiRetriever LsiRetriever::fit(const std::vector<Sample>& train, std::int64_t dim,
                               std::uint64_t seed) {
  if (train.empty()) throw DataError("lsi: empty training corpus");
  LsiRetriever model;
  model.table_ = TermTable::build(train);
  const auto n_terms = static_cast<std::int64_t>(model.table_.terms.size());
  const auto n_docs = static_cast<std::int64_t>(train.size());
  const std::int64_t max_rank = std::min(n_terms, n_docs);
  model.dim_ = std::min(dim, max_rank);
  if (model.dim_ < 1) throw DataError("lsi: dimension must be >= 1");

  Dense x(n_terms, n_docs);
  for (std::int64_t j = 0; j < n_docs; ++j) {
    const auto& sample = train[static_cast<std::size_t>(j)];
    model.doc_ids_.push_back(sample.id);
    model.comments_.push_back(sample.comment_tokens);
    for (const auto& [idx, w] : model.table_.tfidf(sample.code_tokens)) {
      x.at(idx, j) = w;
    }
  }

  const std::int64_t oversample = std::min<std::int64_t>(8, max_rank - model.dim_);
  const std::int64_t probe = model.dim_ + oversample;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dense omega(n_docs, probe);
  for (double& v : omega.a) v = gauss(rng);

  Dense q = multiply(x, omega);  // terms x probe
  orthonormalize_columns(q);
  for (int iteration = 0; iteration < 5; ++iteration) {
    Dense z = transpose_multiply(x, q);  // docs x probe
    orthonormalize_columns(z);
    q = multiply(x, z);
    orthonormalize_columns(q);
  }

  Dense b = transpose_multiply(q, x);          // probe x docs
  Dense bbt(probe, probe);
  for (std::int64_t r = 0; r < probe; ++r) {
    for (std::int64_t c = 0; c < probe; ++c) {
      double s = 0.0;
      for (std::int64_t k = 0; k < n_docs; ++k) s += b.at(r, k) * b.at(c, k);
      bbt.at(r, c) = s;
    }
  }
  std::vector<double> eigenvalues;
  Dense eigenvectors;
  symmetric_eigen(std::move(bbt), eigenvalues, eigenvectors);

  // U_d = Q * top-d eigenvectors of B B^T.
  model.basis_.assign(static_cast<std::size_t>(n_terms * model.dim_), 0.0);
  for (std::int64_t c = 0; c < model.dim_; ++c) {
    for (std::int64_t r = 0; r < n_terms; ++r) {
      double s = 0.0;
      for (std::int64_t k = 0; k < probe; ++k) s += q.at(r, k) * eigenvectors.at(k, c);
      model.basis_[static_cast<std::size_t>(r * model.dim_ + c)] = s;
    }
  }

  model.projections_.resize(static_cast<std::size_t>(n_docs));
  for (std::int64_t j = 0; j < n_docs; ++j) {
    model.projections_[static_cast<std::size_t>(j)] =
        model.project(train[static_cast<std::size_t>(j)].code_tokens);
  }
  return model;
}

std::vector<double> LsiRetriever::project(const TokenSeq& tokens) const {
  std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
  for (const auto& [idx, w] : table_.tfidf(tokens)) {
    const double* row = basis_.data() + idx * dim_;
    for (std::int64_t c = 0; c < dim_; ++c) out[static_cast<std::size_t>(c)] += w * row[c];
  }
  return out;
}

std::vector<RankedDoc> LsiRetriever::rank(const TokenSeq& query_code) const {
  auto query = project(query_code);
  std::vector<RankedDoc> ranked;
  ranked.reserve(doc_ids_.size());
  for (std::size_t j = 0; j < doc_ids_.size(); ++j) {
    ranked.push_back({doc_ids_[j], dense_cosine(query, projections_[j])});
  }
  return sort_ranked(std::move(ranked));
}

TokenSeq LsiRetriever::retrieve_comment(const TokenSeq& query_code,
                                        std::optional<std::uint64_t> exclude_id) const {
  for (const auto& r : rank(query_code)) {
    if (exclude_id && r.doc_id == *exclude_id) continue;
    for (std::size_t j = 0; j < doc_ids_.size(); ++j) {
      if (doc_ids_[j] == r.doc_id) return comments_[j];
    }
  }
  return kEmptyExemplar;
}

// ---------------------------------------------------------------------------
// NNGen
// ---------------------------------------------------------------------------

NnGenRetriever NnGenRetriever::fit(const std::vector<Sample>& train, std::int64_t k) {
  if (train.empty()) throw DataError("nngen: empty training corpus");
  if (k < 1) throw DataError("nngen: k must be >= 1");
  NnGenRetriever model;
  model.table_ = TermTable::build(train);
  model.k_ = k;
  for (const auto& sample : train) {
    model.doc_ids_.push_back(sample.id);
    model.doc_vectors_.push_back(model.table_.counts(sample.code_tokens));
    model.doc_norms_.push_back(norm_of(model.doc_vectors_.back()));
    model.codes_.push_back(sample.code_tokens);
    model.comments_.push_back(sample.comment_tokens);
  }
  return model;
}

TokenSeq NnGenRetriever::retrieve_comment(const TokenSeq& query_code,
                                          std::optional<std::uint64_t> exclude_id) const {
  auto query = table_.counts(query_code);
  double query_norm = norm_of(query);
  std::vector<std::pair<RankedDoc, std::size_t>> ranked;
  ranked.reserve(doc_ids_.size());
  for (std::size_t j = 0; j < doc_ids_.size(); ++j) {
    if (exclude_id && doc_ids_[j] == *exclude_id) continue;
    ranked.push_back(
        {{doc_ids_[j], cosine(query, query_norm, doc_vectors_[j], doc_norms_[j])}, j});
  }
  if (ranked.empty()) return kEmptyExemplar;
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first.similarity != b.first.similarity) return a.first.similarity > b.first.similarity;
    return a.first.doc_id < b.first.doc_id;
  });
  std::size_t shortlist = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k_));
  std::size_t best_index = ranked[0].second;
  double best_bleu = -1.0;
  std::uint64_t best_id = 0;
  for (std::size_t i = 0; i < shortlist; ++i) {
    std::size_t j = ranked[i].second;
    double bleu = sentence_bleu(codes_[j], query_code);
    if (bleu > best_bleu || (bleu == best_bleu && doc_ids_[j] < best_id)) {
      best_bleu = bleu;
      best_index = j;
      best_id = doc_ids_[j];
    }
  }
  return comments_[best_index];
}

// ---------------------------------------------------------------------------
// Retrieve-only
// ---------------------------------------------------------------------------

TokenSeq retrieve_only(const Bm25Index& index, const std::vector<Sample>& corpus,
                       const Sample& query, bool exclude_self) {
  std::optional<std::uint64_t> exclude;
  if (exclude_self) exclude = query.id;
  auto results = index.retrieve(query.code_tokens, 1, exclude);
  if (results.empty() || results[0].score <= 0.0) return kEmptyExemplar;
  for (const auto& sample : corpus) {
    if (sample.id == results[0].doc_id) return sample.comment_tokens;
  }
  throw DataError("retrieve_only: hit not present in corpus");
}

}  // namespace excom
