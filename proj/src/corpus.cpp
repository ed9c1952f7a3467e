#include "excom/corpus.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "excom/java_parser.hpp"

namespace excom {
namespace {

using nlohmann::json;

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

void emit_fragment(const std::string& fragment, TokenSeq& out) {
  std::string cleaned;
  for (char c : fragment) {
    if (is_upper(c)) cleaned += static_cast<char>(c - 'A' + 'a');
    else if (is_lower(c)) cleaned += c;
  }
  if (!cleaned.empty()) out.push_back(std::move(cleaned));
}

// Camel-case split of one underscore-free fragment. A boundary sits before an
// uppercase letter that follows a non-uppercase character, and before the
// last letter of an uppercase run that is followed by a lowercase letter.
void split_camel(const std::string& fragment, TokenSeq& out) {
  std::string current;
  const std::size_t n = fragment.size();
  for (std::size_t i = 0; i < n; ++i) {
    char c = fragment[i];
    bool boundary = false;
    if (i > 0 && is_upper(c)) {
      char prev = fragment[i - 1];
      if (!is_upper(prev)) {
        boundary = true;
      } else if (i + 1 < n && is_lower(fragment[i + 1])) {
        boundary = true;
      }
    }
    if (boundary && !current.empty()) {
      emit_fragment(current, out);
      current.clear();
    }
    current += c;
  }
  if (!current.empty()) emit_fragment(current, out);
}

bool all_ascii(const std::string& s) {
  for (unsigned char c : s) {
    if (c >= 0x80) return false;
  }
  return true;
}

std::string pair_key(const TokenSeq& code, const TokenSeq& comment) {
  std::string key = join(code, "\x1f");
  key += "\x1e";
  key += join(comment, "\x1f");
  return key;
}

}  // namespace

TokenSeq normalize_tokens(const TokenSeq& raw) {
  TokenSeq out;
  for (const auto& token : raw) {
    std::string fragment;
    for (char c : token) {
      if (c == '_') {
        if (!fragment.empty()) split_camel(fragment, out), fragment.clear();
      } else {
        fragment += c;
      }
    }
    if (!fragment.empty()) split_camel(fragment, out);
  }
  return out;
}

std::optional<TokenSeq> extract_comment(const std::string& doc_text) {
  std::size_t terminator = doc_text.find_first_of(".!?");
  std::string raw;
  if (terminator != std::string::npos) {
    raw = doc_text.substr(0, terminator);
  } else {
    raw = doc_text.substr(0, doc_text.find('\n'));
  }
  TokenSeq tokens = normalize_tokens(split_ws(raw));
  if (tokens.empty()) return std::nullopt;
  return tokens;
}

std::vector<Sample> deduplicate(const std::vector<Sample>& samples) {
  std::vector<Sample> out;
  std::unordered_set<std::string> seen;
  out.reserve(samples.size());
  for (const auto& sample : samples) {
    if (seen.insert(pair_key(sample.code_tokens, sample.comment_tokens)).second) {
      out.push_back(sample);
    }
  }
  return out;
}

CorpusSplits split_by_project(const std::vector<Sample>& samples, const SplitSpec& spec) {
  if (spec.train_fraction <= 0 || spec.valid_fraction <= 0 || spec.test_fraction <= 0) {
    throw DataError("split_by_project: fractions must be positive");
  }
  double sum = spec.train_fraction + spec.valid_fraction + spec.test_fraction;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DataError("split_by_project: fractions sum to " + fmt_double(sum));
  }
  CorpusSplits splits;
  for (const auto& sample : samples) {
    double u = hash_to_unit(stable_hash(sample.project_id, spec.seed));
    if (u < spec.train_fraction) {
      splits.train.push_back(sample);
    } else if (u < spec.train_fraction + spec.valid_fraction) {
      splits.valid.push_back(sample);
    } else {
      splits.test.push_back(sample);
    }
  }
  return splits;
}

namespace {

SplitStats split_stats(const std::vector<Sample>& samples) {
  SplitStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  double comment = 0, code = 0, sbt_len = 0;
  for (const auto& sample : samples) {
    comment += static_cast<double>(sample.comment_tokens.size());
    code += static_cast<double>(sample.code_tokens.size());
    sbt_len += static_cast<double>(sample.sbt_tokens.size());
  }
  double n = static_cast<double>(samples.size());
  s.avg_comment_tokens = comment / n;
  s.avg_code_tokens = code / n;
  s.avg_sbt_tokens = sbt_len / n;
  return s;
}

}  // namespace

CorpusStats stats(const CorpusSplits& splits) {
  return {split_stats(splits.train), split_stats(splits.valid), split_stats(splits.test)};
}

PreprocessOutcome preprocess(const std::vector<RawRecord>& records,
                             const PreprocessOptions& options) {
  PreprocessOutcome outcome;
  std::vector<Sample> samples;
  for (const auto& record : records) {
    if (record.source_text.empty() || !all_ascii(record.source_text) ||
        !all_ascii(record.doc_text)) {
      ++outcome.skipped;
      continue;
    }
    auto comment = extract_comment(record.doc_text);
    if (!comment) {
      ++outcome.skipped;
      continue;
    }
    // Comments opening with "auto generated" mark machine-written code.
    if (comment->size() >= 2 && (*comment)[0] == "auto" && (*comment)[1] == "generated") {
      ++outcome.skipped;
      continue;
    }
    Sample sample;
    sample.project_id = record.project_id;
    sample.comment_tokens = std::move(*comment);
    try {
      std::vector<SourceToken> source_tokens = tokenize_source(record.source_text);
      TokenSeq raw_code;
      raw_code.reserve(source_tokens.size());
      for (const auto& t : source_tokens) raw_code.push_back(t.text);
      sample.code_tokens = normalize_tokens(raw_code);
      if (record.sbt_tokens) {
        sample.sbt_tokens = *record.sbt_tokens;
      } else {
        sample.sbt_tokens = sbt(parse_method(record.source_text));
      }
    } catch (const ParseError&) {
      ++outcome.skipped;
      continue;
    }
    if (sample.code_tokens.empty() || sample.sbt_tokens.empty()) {
      ++outcome.skipped;
      continue;
    }
    if (options.challenge_mode) {
      sample.code_tokens = sbt_to_ao(sample.sbt_tokens);
    }
    samples.push_back(std::move(sample));
  }
  outcome.samples = deduplicate(samples);
  for (std::size_t i = 0; i < outcome.samples.size(); ++i) {
    outcome.samples[i].id = i;
  }
  return outcome;
}

std::vector<RawRecord> read_raw_records(std::istream& in, std::uint64_t* malformed) {
  std::vector<RawRecord> records;
  std::string line;
  std::uint64_t bad = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json parsed = json::parse(line, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object() ||
        !parsed.contains("source_text") || !parsed["source_text"].is_string() ||
        !parsed.contains("project_id") || !parsed["project_id"].is_string()) {
      ++bad;
      continue;
    }
    RawRecord record;
    record.source_text = parsed["source_text"].get<std::string>();
    record.project_id = parsed["project_id"].get<std::string>();
    if (parsed.contains("doc_text") && parsed["doc_text"].is_string()) {
      record.doc_text = parsed["doc_text"].get<std::string>();
    }
    if (parsed.contains("sbt_tokens") && parsed["sbt_tokens"].is_array()) {
      TokenSeq tokens;
      bool ok = true;
      for (const auto& t : parsed["sbt_tokens"]) {
        if (!t.is_string()) {
          ok = false;
          break;
        }
        tokens.push_back(t.get<std::string>());
      }
      if (!ok) {
        ++bad;
        continue;
      }
      record.sbt_tokens = std::move(tokens);
    }
    records.push_back(std::move(record));
  }
  if (malformed) *malformed = bad;
  return records;
}

std::vector<RawRecord> load_raw_records(const std::string& path, std::uint64_t* malformed) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open raw record file: " + path);
  return read_raw_records(in, malformed);
}

void write_samples(std::ostream& out, const std::vector<Sample>& samples) {
  for (const auto& sample : samples) {
    json line = {
        {"id", sample.id},
        {"project_id", sample.project_id},
        {"code_tokens", sample.code_tokens},
        {"sbt_tokens", sample.sbt_tokens},
        {"comment_tokens", sample.comment_tokens},
    };
    out << line.dump() << '\n';
  }
}

void save_samples(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write sample file: " + path);
  write_samples(out, samples);
}

std::vector<Sample> read_samples(std::istream& in) {
  std::vector<Sample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json parsed = json::parse(line, nullptr, false);
    if (parsed.is_discarded()) {
      throw DataError("sample file: malformed JSON on line " + std::to_string(line_no));
    }
    Sample sample;
    try {
      sample.id = parsed.at("id").get<std::uint64_t>();
      sample.project_id = parsed.at("project_id").get<std::string>();
      sample.code_tokens = parsed.at("code_tokens").get<TokenSeq>();
      sample.sbt_tokens = parsed.at("sbt_tokens").get<TokenSeq>();
      sample.comment_tokens = parsed.at("comment_tokens").get<TokenSeq>();
    } catch (const json::exception& e) {
      throw DataError("sample file: line " + std::to_string(line_no) + ": " + e.what());
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<Sample> load_samples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sample file: " + path);
  return read_samples(in);
}

}  // namespace excom
