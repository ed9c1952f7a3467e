#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "excom/common.hpp"

namespace excom {

/// One raw function/comment record as it arrives from the miner.
struct RawRecord {
  std::string source_text;  // function body, never empty
  std::string doc_text;     // documentation block, possibly empty
  std::string project_id;
  // Optional externally parsed SBT tokens; when present the Java parser is
  // bypassed for this record.
  std::optional<TokenSeq> sbt_tokens;
};

/// One preprocessed function, ready for indexing and model input.
struct Sample {
  std::uint64_t id = 0;
  std::string project_id;
  TokenSeq code_tokens;
  TokenSeq sbt_tokens;
  TokenSeq comment_tokens;
};

struct SplitSpec {
  double train_fraction = 0.8;
  double valid_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct SplitStats {
  std::uint64_t count = 0;
  double avg_comment_tokens = 0.0;
  double avg_code_tokens = 0.0;
  double avg_sbt_tokens = 0.0;
};

struct CorpusStats {
  SplitStats train, valid, test;
};

/// Splits a token on underscores and camel-case boundaries, strips non-alpha
/// characters, lowercases, and drops empty fragments. An uppercase run
/// followed by a lowercase letter splits before its last character, so
/// "parseHTTPRequest" becomes parse, http, request.
TokenSeq normalize_tokens(const TokenSeq& raw);

/// First sentence ('.', '!' or '?' terminated) of the documentation text, or
/// the first line when no terminator exists, run through normalize_tokens.
/// Empty result means the record has no usable comment.
std::optional<TokenSeq> extract_comment(const std::string& doc_text);

/// Keeps the first occurrence of each distinct (code_tokens, comment_tokens)
/// pair; order is otherwise preserved.
std::vector<Sample> deduplicate(const std::vector<Sample>& samples);

/// Deterministic project-wise partition: every sample of a project lands in
/// the same split, chosen by hashing (project_id, seed) into [0,1) and
/// thresholding by cumulative fractions.
struct CorpusSplits {
  std::vector<Sample> train, valid, test;
};
CorpusSplits split_by_project(const std::vector<Sample>& samples, const SplitSpec& spec);

CorpusStats stats(const CorpusSplits& splits);

struct PreprocessOptions {
  bool challenge_mode = false;  // write SBT-AO tokens in place of code tokens
};

struct PreprocessOutcome {
  std::vector<Sample> samples;
  std::uint64_t skipped = 0;  // records dropped by parser/comment/ASCII filters
};

/// Full record-level pipeline: ASCII filter, comment extraction, source
/// tokenization + parsing + SBT, normalization, auto-generated-comment filter.
/// Records that fail any stage are counted, not fatal. Deduplication and id
/// assignment happen across the whole batch.
PreprocessOutcome preprocess(const std::vector<RawRecord>& records,
                             const PreprocessOptions& options = {});

// --- line-delimited JSON I/O ---

std::vector<RawRecord> read_raw_records(std::istream& in, std::uint64_t* malformed = nullptr);
std::vector<RawRecord> load_raw_records(const std::string& path, std::uint64_t* malformed = nullptr);

void write_samples(std::ostream& out, const std::vector<Sample>& samples);
void save_samples(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> read_samples(std::istream& in);
std::vector<Sample> load_samples(const std::string& path);

}  // namespace excom
