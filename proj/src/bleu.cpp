#include "excom/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace excom {
namespace {

using NgramCounts = std::unordered_map<std::string, std::uint64_t>;

// n-grams joined with '\x1f' so multi-token grams cannot collide.
NgramCounts count_ngrams(const TokenSeq& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += tokens[i + j];
    }
    counts[key] += 1;
  }
  return counts;
}

struct PairTally {
  std::uint64_t matched = 0;
  std::uint64_t total = 0;
};

PairTally tally_order(const TokenSeq& cand, const TokenSeq& ref, int n) {
  PairTally t;
  if (static_cast<int>(cand.size()) < n) return t;
  t.total = cand.size() - n + 1;
  NgramCounts ref_counts = count_ngrams(ref, n);
  for (auto& [gram, count] : count_ngrams(cand, n)) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) t.matched += std::min(count, it->second);
  }
  return t;
}

double brevity_penalty(std::uint64_t cand_len, std::uint64_t ref_len) {
  if (cand_len == 0) return 0.0;
  if (cand_len >= ref_len) return 1.0;
  return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
}

}  // namespace

BleuReport corpus_bleu(const std::vector<TokenSeq>& candidates,
                       const std::vector<TokenSeq>& references, int max_order) {
  if (candidates.size() != references.size()) {
    throw DataError("corpus_bleu: " + std::to_string(candidates.size()) +
                    " candidates vs " + std::to_string(references.size()) +
                    " references");
  }
  BleuReport report;
  std::vector<std::uint64_t> matched(max_order, 0), total(max_order, 0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    report.candidate_len += candidates[i].size();
    report.reference_len += references[i].size();
    for (int n = 1; n <= max_order; ++n) {
      PairTally t = tally_order(candidates[i], references[i], n);
      matched[n - 1] += t.matched;
      total[n - 1] += t.total;
    }
  }
  report.brevity_penalty = brevity_penalty(report.candidate_len, report.reference_len);
  report.precision.resize(max_order);
  report.bleu_n.resize(max_order);
  double log_sum = 0.0;
  bool any_zero = false;
  for (int n = 0; n < max_order; ++n) {
    double p = total[n] == 0 ? 0.0
                             : static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    report.precision[n] = p;
    report.bleu_n[n] = 100.0 * report.brevity_penalty * p;
    if (p <= 0.0) {
      any_zero = true;
    } else {
      log_sum += std::log(p) / max_order;
    }
  }
  report.composite = any_zero ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_sum);
  return report;
}

double sentence_bleu(const TokenSeq& candidate, const TokenSeq& reference,
                     int max_order) {
  std::uint64_t cand_len = candidate.size();
  std::uint64_t ref_len = reference.size();
  double bp = brevity_penalty(cand_len, ref_len);
  if (bp == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_order; ++n) {
    PairTally t = tally_order(candidate, reference, n);
    double num = static_cast<double>(t.matched);
    double den = static_cast<double>(t.total);
    if (n >= 2) {
      num += 1.0;
      den += 1.0;
    }
    if (num <= 0.0 || den <= 0.0) return 0.0;  // unsmoothed unigram miss
    log_sum += std::log(num / den) / max_order;
  }
  return 100.0 * bp * std::exp(log_sum);
}

std::vector<LengthBucketRow> length_bucket_report(
    const std::vector<TokenSeq>& predictions,
    const std::vector<TokenSeq>& references,
    const std::vector<std::uint64_t>& lengths, std::uint64_t bucket_width) {
  if (predictions.size() != references.size() || predictions.size() != lengths.size()) {
    throw DataError("length_bucket_report: misaligned inputs");
  }
  if (bucket_width == 0) throw DataError("length_bucket_report: zero bucket width");
  std::map<std::uint64_t, std::pair<double, std::uint64_t>> buckets;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::uint64_t bucket = (lengths[i] / bucket_width) * bucket_width;
    auto& [sum, count] = buckets[bucket];
    sum += sentence_bleu(predictions[i], references[i]);
    count += 1;
  }
  std::vector<LengthBucketRow> rows;
  rows.reserve(buckets.size());
  for (auto& [bucket, agg] : buckets) {
    rows.push_back({bucket, agg.first / static_cast<double>(agg.second), agg.second});
  }
  return rows;
}

std::vector<LowFreqRow> low_freq_report(
    const std::vector<TokenSeq>& predictions,
    const std::vector<TokenSeq>& references,
    const std::map<std::string, std::uint64_t>& train_freq,
    const std::vector<std::uint64_t>& thresholds) {
  if (predictions.size() != references.size()) {
    throw DataError("low_freq_report: misaligned inputs");
  }
  auto freq_of = [&](const std::string& token) -> std::uint64_t {
    auto it = train_freq.find(token);
    return it == train_freq.end() ? 0 : it->second;
  };
  std::vector<LowFreqRow> rows;
  for (std::uint64_t threshold : thresholds) {
    LowFreqRow row;
    row.threshold = threshold;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      std::unordered_map<std::string, std::uint64_t> pred_counts, ref_counts;
      for (const auto& t : predictions[i]) pred_counts[t] += 1;
      for (const auto& t : references[i]) ref_counts[t] += 1;
      for (auto& [token, count] : ref_counts) {
        if (freq_of(token) > threshold) continue;
        row.reference += count;
        auto it = pred_counts.find(token);
        if (it != pred_counts.end()) row.matched += std::min(count, it->second);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace excom
