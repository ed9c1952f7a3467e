#include "excom/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace excom {

namespace {
constexpr char kIndexMagic[] = "excom-bm25-index v1";
}

Bm25Index Bm25Index::build(const std::vector<Sample>& samples) {
  std::vector<std::pair<std::uint64_t, TokenSeq>> docs;
  docs.reserve(samples.size());
  for (const auto& s : samples) docs.emplace_back(s.id, s.code_tokens);
  return build(docs);
}

Bm25Index Bm25Index::build(const std::vector<std::pair<std::uint64_t, TokenSeq>>& docs) {
  if (docs.empty()) throw DataError("bm25: cannot build an index over an empty corpus");
  Bm25Index index;
  std::uint64_t total_len = 0;
  for (const auto& [doc_id, tokens] : docs) {
    if (index.doc_len_.count(doc_id)) {
      throw DataError("bm25: duplicate document id " + std::to_string(doc_id));
    }
    index.doc_len_[doc_id] = static_cast<std::uint32_t>(tokens.size());
    total_len += tokens.size();
    std::unordered_map<std::string, std::uint32_t> tf;
    for (const auto& token : tokens) tf[token] += 1;
    for (const auto& [term, freq] : tf) {
      index.postings_[term].push_back({doc_id, freq});
    }
  }
  for (auto& [term, posting_list] : index.postings_) {
    std::sort(posting_list.begin(), posting_list.end(),
              [](const Posting& a, const Posting& b) { return a.doc_id < b.doc_id; });
  }
  index.avg_len_ = static_cast<double>(total_len) / static_cast<double>(docs.size());
  return index;
}

std::uint64_t Bm25Index::doc_freq(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? 0 : it->second.size();
}

namespace {

double idf(std::uint64_t n_docs, std::uint64_t df) {
  return std::log(1.0 + (static_cast<double>(n_docs) - static_cast<double>(df) + 0.5) /
                            (static_cast<double>(df) + 0.5));
}

double tf_component(double tf, double dl, double avg_len) {
  return tf * (Bm25Index::kK1 + 1.0) /
         (tf + Bm25Index::kK1 * (1.0 - Bm25Index::kB + Bm25Index::kB * dl / avg_len));
}

}  // namespace

double Bm25Index::score(const TokenSeq& query_tokens, std::uint64_t doc_id) const {
  auto len_it = doc_len_.find(doc_id);
  if (len_it == doc_len_.end()) return 0.0;
  double dl = len_it->second;
  double total = 0.0;
  std::set<std::string> distinct(query_tokens.begin(), query_tokens.end());
  for (const auto& term : distinct) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const auto& plist = it->second;
    auto pit = std::lower_bound(plist.begin(), plist.end(), doc_id,
                                [](const Posting& p, std::uint64_t id) { return p.doc_id < id; });
    if (pit == plist.end() || pit->doc_id != doc_id) continue;
    total += idf(doc_count(), plist.size()) * tf_component(pit->term_freq, dl, avg_len_);
  }
  return total;
}

std::vector<Bm25Index::Result> Bm25Index::retrieve(
    const TokenSeq& query_tokens, std::size_t k,
    std::optional<std::uint64_t> exclude_id) const {
  if (k == 0) throw DataError("bm25: retrieve requires k >= 1");
  // Term-at-a-time accumulation over touched documents only.
  std::unordered_map<std::uint64_t, double> accum;
  std::set<std::string> distinct(query_tokens.begin(), query_tokens.end());
  for (const auto& term : distinct) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    double term_idf = idf(doc_count(), it->second.size());
    for (const Posting& p : it->second) {
      if (exclude_id && p.doc_id == *exclude_id) continue;
      accum[p.doc_id] += term_idf * tf_component(p.term_freq, doc_len_.at(p.doc_id), avg_len_);
    }
  }
  std::vector<Result> results;
  results.reserve(accum.size());
  for (const auto& [doc_id, s] : accum) results.push_back({doc_id, s, 0});
  std::sort(results.begin(), results.end(), [](const Result& a, const Result& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
  // k = N means every document, including zero-score ones the query never touched.
  if (results.size() < k) {
    std::set<std::uint64_t> present;
    for (const auto& r : results) present.insert(r.doc_id);
    for (const auto& [doc_id, len] : doc_len_) {
      if (results.size() >= k) break;
      if (present.count(doc_id) || (exclude_id && doc_id == *exclude_id)) continue;
      results.push_back({doc_id, 0.0, 0});
    }
    std::stable_sort(results.begin(), results.end(), [](const Result& a, const Result& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc_id < b.doc_id;
    });
  }
  if (results.size() > k) results.resize(k);
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i].rank = static_cast<std::uint32_t>(i + 1);
  }
  return results;
}

void Bm25Index::save(std::ostream& out) const {
  out << kIndexMagic << '\n';
  out << "docs " << doc_len_.size() << " avg_len " << fmt_double(avg_len_) << '\n';
  for (const auto& [doc_id, len] : doc_len_) {
    out << "d " << doc_id << ' ' << len << '\n';
  }
  for (const auto& [term, plist] : postings_) {
    out << "t " << term;
    for (const Posting& p : plist) out << ' ' << p.doc_id << ':' << p.term_freq;
    out << '\n';
  }
}

void Bm25Index::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write index file: " + path);
  save(out);
}

Bm25Index Bm25Index::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kIndexMagic) {
    throw DataError("bm25: not an index file or unsupported version");
  }
  Bm25Index index;
  std::uint64_t declared_docs = 0;
  {
    if (!std::getline(in, line)) throw DataError("bm25: truncated index header");
    std::istringstream header(line);
    std::string kw1, kw2;
    header >> kw1 >> declared_docs >> kw2 >> index.avg_len_;
    if (kw1 != "docs" || kw2 != "avg_len" || header.fail()) {
      throw DataError("bm25: malformed index header");
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string tag;
    row >> tag;
    if (tag == "d") {
      std::uint64_t doc_id;
      std::uint32_t len;
      row >> doc_id >> len;
      if (row.fail()) throw DataError("bm25: malformed doc row");
      index.doc_len_[doc_id] = len;
    } else if (tag == "t") {
      std::string term;
      row >> term;
      auto& plist = index.postings_[term];
      std::string cell;
      while (row >> cell) {
        std::size_t colon = cell.find(':');
        if (colon == std::string::npos) throw DataError("bm25: malformed posting cell");
        plist.push_back({std::stoull(cell.substr(0, colon)),
                         static_cast<std::uint32_t>(std::stoul(cell.substr(colon + 1)))});
      }
    } else {
      throw DataError("bm25: unknown row tag '" + tag + "'");
    }
  }
  if (index.doc_len_.size() != declared_docs) {
    throw DataError("bm25: doc count mismatch in index file");
  }
  return index;
}

Bm25Index Bm25Index::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open index file: " + path);
  return load(in);
}

std::vector<ExemplarPair> pair_exemplars(const std::vector<Sample>& queries,
                                         const Bm25Index& index,
                                         const std::vector<Sample>& corpus,
                                         bool exclude_self) {
  std::unordered_map<std::uint64_t, const Sample*> by_id;
  for (const auto& s : corpus) by_id[s.id] = &s;
  std::vector<ExemplarPair> pairs;
  pairs.reserve(queries.size());
  for (const auto& query : queries) {
    ExemplarPair pair;
    pair.query_id = query.id;
    std::optional<std::uint64_t> exclude;
    if (exclude_self) exclude = query.id;
    auto results = index.retrieve(query.code_tokens, 1, exclude);
    if (results.empty() || results[0].score <= 0.0) {
      pair.exemplar_tokens = kEmptyExemplar;
    } else {
      auto it = by_id.find(results[0].doc_id);
      if (it == by_id.end()) {
        throw DataError("pair_exemplars: retrieved id " +
                        std::to_string(results[0].doc_id) + " missing from corpus");
      }
      pair.similar_id = static_cast<std::int64_t>(results[0].doc_id);
      pair.score = results[0].score;
      pair.exemplar_tokens = it->second->comment_tokens;
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void write_pairs(std::ostream& out, const std::vector<ExemplarPair>& pairs) {
  for (const auto& pair : pairs) {
    nlohmann::json line = {
        {"query_id", pair.query_id},
        {"similar_id", pair.similar_id},
        {"score", pair.score},
        {"exemplar_tokens", pair.exemplar_tokens},
    };
    out << line.dump() << '\n';
  }
}

void save_pairs(const std::string& path, const std::vector<ExemplarPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write pair file: " + path);
  write_pairs(out, pairs);
}

std::vector<ExemplarPair> read_pairs(std::istream& in) {
  std::vector<ExemplarPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json parsed = nlohmann::json::parse(line, nullptr, false);
    if (parsed.is_discarded()) {
      throw DataError("pair file: malformed JSON on line " + std::to_string(line_no));
    }
    ExemplarPair pair;
    try {
      pair.query_id = parsed.at("query_id").get<std::uint64_t>();
      pair.similar_id = parsed.at("similar_id").get<std::int64_t>();
      pair.score = parsed.at("score").get<double>();
      pair.exemplar_tokens = parsed.at("exemplar_tokens").get<TokenSeq>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("pair file: line " + std::to_string(line_no) + ": " + e.what());
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<ExemplarPair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pair file: " + path);
  return read_pairs(in);
}

}  // namespace excom
