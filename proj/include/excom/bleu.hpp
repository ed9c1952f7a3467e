#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "excom/common.hpp"

namespace excom {

/// Corpus-level BLEU with per-order components. Scores are on a 0..100 scale.
struct BleuReport {
  double composite = 0.0;          // BP * exp(sum w_n log p_n); 0 if any p_n == 0
  std::vector<double> bleu_n;      // component n: BP * p_n, scaled to 0..100
  std::vector<double> precision;   // raw modified n-gram precisions p_1..p_N in [0,1]
  double brevity_penalty = 1.0;
  std::uint64_t candidate_len = 0;
  std::uint64_t reference_len = 0;
};

/// Modified n-gram precision BLEU aggregated over the whole corpus.
/// Candidates and references are aligned by position and must have equal size.
BleuReport corpus_bleu(const std::vector<TokenSeq>& candidates,
                       const std::vector<TokenSeq>& references, int max_order = 4);

/// Single-pair BLEU with add-one smoothing on numerator and denominator of
/// p_n for n >= 2, so short candidates with some overlap score above zero.
double sentence_bleu(const TokenSeq& candidate, const TokenSeq& reference,
                     int max_order = 4);

struct LengthBucketRow {
  std::uint64_t length = 0;  // bucket start (inclusive)
  double mean_bleu = 0.0;
  std::uint64_t count = 0;
};

/// Mean sentence BLEU of prediction/reference pairs grouped by the given
/// per-pair lengths. Buckets with no members are omitted.
std::vector<LengthBucketRow> length_bucket_report(
    const std::vector<TokenSeq>& predictions,
    const std::vector<TokenSeq>& references,
    const std::vector<std::uint64_t>& lengths, std::uint64_t bucket_width = 1);

struct LowFreqRow {
  std::uint64_t threshold = 0;
  std::uint64_t matched = 0;    // token occurrences in prediction∩reference
  std::uint64_t reference = 0;  // token occurrences in references alone
};

/// For each frequency threshold, counts correctly generated token occurrences
/// (multiset intersection of each prediction with its reference) whose
/// training-set frequency is at or below the threshold.
std::vector<LowFreqRow> low_freq_report(
    const std::vector<TokenSeq>& predictions,
    const std::vector<TokenSeq>& references,
    const std::map<std::string, std::uint64_t>& train_freq,
    const std::vector<std::uint64_t>& thresholds = {10, 20, 50, 100});

}  // namespace excom
