#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "excom/common.hpp"
#include "excom/corpus.hpp"
#include "excom/model.hpp"

namespace excom {

/// Key/value echo of the knobs a stage ran with, written to the manifest.
using ConfigEcho = std::map<std::string, std::string>;

/// Every stage drops `<output>.manifest.json` describing how to rerun it.
void write_manifest(const std::string& output_path, const std::string& stage,
                    const ConfigEcho& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs, double wall_ms);

struct PreprocessStageResult {
  std::uint64_t read = 0;
  std::uint64_t malformed = 0;
  std::uint64_t skipped = 0;
  std::uint64_t train = 0, valid = 0, test = 0;
};
PreprocessStageResult stage_preprocess(const std::string& raw_path,
                                       const std::string& out_dir, const SplitSpec& split,
                                       bool challenge_mode);

void stage_index(const std::string& train_path, const std::string& index_path);

void stage_pair(const std::string& index_path, const std::string& corpus_path,
                const std::string& queries_path, bool exclude_self,
                const std::string& out_path);

struct TrainStageResult {
  TrainResult train;
  std::string checkpoint_path;
};
TrainStageResult stage_train(const std::string& train_path, const std::string& valid_path,
                             const std::string& train_pairs_path,
                             const std::string& valid_pairs_path, const ModelConfig& config,
                             const std::string& checkpoint_path);

void stage_generate(const std::string& checkpoint_path, const std::string& queries_path,
                    const std::string& pairs_path, const std::string& train_path,
                    ExemplarMode mode, std::int64_t beam_size, std::uint64_t seed,
                    const std::string& out_path);

struct EvaluateOptions {
  std::string length_report_path;  // empty: skip
  std::string length_by = "comment";
  std::uint64_t bucket_width = 1;
  std::string lowfreq_report_path;  // empty: skip
  std::string train_path;           // required for the low-frequency report
};
void stage_evaluate(const std::string& predictions_path, const std::string& references_path,
                    const std::string& report_path, const EvaluateOptions& options);

struct BaselineOptions {
  std::string engine = "retrieve";  // retrieve | vsm | lsi | nngen
  std::int64_t lsi_dim = 500;
  std::int64_t nngen_k = 5;
  std::uint64_t seed = 1;
  bool exclude_self = false;
};
void stage_baseline(const std::string& train_path, const std::string& queries_path,
                    const BaselineOptions& options, const std::string& out_path);

// Shared prediction format: "<sample id>\t<space-joined tokens>" per line.
void save_predictions(const std::string& path,
                      const std::vector<std::pair<std::uint64_t, TokenSeq>>& predictions);
std::vector<std::pair<std::uint64_t, TokenSeq>> load_predictions(const std::string& path);

}  // namespace excom
