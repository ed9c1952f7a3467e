#include "excom/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "excom/baselines.hpp"
#include "excom/bleu.hpp"
#include "excom/bm25.hpp"
#include "excom/java_parser.hpp"

namespace excom {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string score_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<const Sample*> reference_order(
    const std::vector<std::pair<std::uint64_t, TokenSeq>>& predictions,
    const std::vector<Sample>& references) {
  std::unordered_map<std::uint64_t, const Sample*> by_id;
  for (const auto& s : references) by_id[s.id] = &s;
  std::vector<const Sample*> ordered;
  ordered.reserve(predictions.size());
  for (const auto& [id, tokens] : predictions) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw DataError("evaluate: prediction id " + std::to_string(id) +
                      " has no reference sample");
    }
    ordered.push_back(it->second);
  }
  return ordered;
}

}  // namespace

void write_manifest(const std::string& output_path, const std::string& stage,
                    const ConfigEcho& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs, double wall_ms) {
  nlohmann::json manifest = {
      {"stage", stage},
      {"seed", seed},
      {"inputs", inputs},
      {"output", output_path},
      {"wall_ms", wall_ms},
      {"config", config},
  };
  std::ofstream out(output_path + ".manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write manifest for " + output_path);
  out << manifest.dump(2) << '\n';
}

PreprocessStageResult stage_preprocess(const std::string& raw_path,
                                       const std::string& out_dir, const SplitSpec& split,
                                       bool challenge_mode) {
  auto start = Clock::now();
  PreprocessStageResult result;
  auto records = load_raw_records(raw_path, &result.malformed);
  result.read = records.size() + result.malformed;

  PreprocessOptions options;
  options.challenge_mode = challenge_mode;
  auto outcome = preprocess(records, options);
  result.skipped = outcome.skipped;

  auto splits = split_by_project(outcome.samples, split);
  result.train = splits.train.size();
  result.valid = splits.valid.size();
  result.test = splits.test.size();

  std::filesystem::create_directories(out_dir);
  std::string train_path = out_dir + "/train.jsonl";
  save_samples(train_path, splits.train);
  save_samples(out_dir + "/valid.jsonl", splits.valid);
  save_samples(out_dir + "/test.jsonl", splits.test);

  ConfigEcho echo = {
      {"train_fraction", fmt_double(split.train_fraction)},
      {"valid_fraction", fmt_double(split.valid_fraction)},
      {"test_fraction", fmt_double(split.test_fraction)},
      {"mode", challenge_mode ? "challenge" : "standard"},
      {"malformed", std::to_string(result.malformed)},
      {"skipped", std::to_string(result.skipped)},
  };
  write_manifest(train_path, "preprocess", echo, split.seed, {raw_path}, elapsed_ms(start));
  return result;
}

void stage_index(const std::string& train_path, const std::string& index_path) {
  auto start = Clock::now();
  auto samples = load_samples(train_path);
  auto index = Bm25Index::build(samples);
  index.save_file(index_path);
  write_manifest(index_path, "index", {{"docs", std::to_string(index.doc_count())}}, 0,
                 {train_path}, elapsed_ms(start));
}

void stage_pair(const std::string& index_path, const std::string& corpus_path,
                const std::string& queries_path, bool exclude_self,
                const std::string& out_path) {
  auto start = Clock::now();
  auto index = Bm25Index::load_file(index_path);
  auto corpus = load_samples(corpus_path);
  auto queries = load_samples(queries_path);
  auto pairs = pair_exemplars(queries, index, corpus, exclude_self);
  save_pairs(out_path, pairs);
  ConfigEcho echo = {{"exclude_self", exclude_self ? "true" : "false"},
                     {"queries", std::to_string(queries.size())}};
  write_manifest(out_path, "pair", echo, 0, {index_path, corpus_path, queries_path},
                 elapsed_ms(start));
}

namespace {

ConfigEcho echo_model_config(const ModelConfig& c) {
  return {
      {"embed_dim", std::to_string(c.embed_dim)},
      {"hidden_dim", std::to_string(c.hidden_dim)},
      {"attn_dim", std::to_string(c.attn_width())},
      {"out_hidden_dim", std::to_string(c.out_width())},
      {"max_src_len", std::to_string(c.max_src_len)},
      {"max_tgt_len", std::to_string(c.max_tgt_len)},
      {"dropout", fmt_double(c.dropout)},
      {"beam_size", std::to_string(c.beam_size)},
      {"code_vocab_cap", std::to_string(c.code_vocab_cap)},
      {"sbt_vocab_cap", std::to_string(c.sbt_vocab_cap)},
      {"comment_vocab_cap", std::to_string(c.comment_vocab_cap)},
      {"lr", fmt_double(c.lr)},
      {"lr_decay", fmt_double(c.lr_decay)},
      {"clip_norm", fmt_double(c.clip_norm)},
      {"batch_size", std::to_string(c.batch_size)},
      {"epochs", std::to_string(c.epochs)},
      {"tie_fusion", c.tie_fusion ? "true" : "false"},
      {"select_by_bleu", c.select_by_bleu ? "true" : "false"},
  };
}

}  // namespace

TrainStageResult stage_train(const std::string& train_path, const std::string& valid_path,
                             const std::string& train_pairs_path,
                             const std::string& valid_pairs_path, const ModelConfig& config,
                             const std::string& checkpoint_path) {
  auto start = Clock::now();
  auto train_samples = load_samples(train_path);
  auto valid_samples = valid_path.empty() ? std::vector<Sample>{} : load_samples(valid_path);
  auto train_pairs = load_pairs(train_pairs_path);
  auto valid_pairs =
      valid_pairs_path.empty() ? std::vector<ExemplarPair>{} : load_pairs(valid_pairs_path);

  std::vector<const TokenSeq*> code_docs, comment_docs;
  std::vector<TokenSeq> sbt_ao_docs;
  sbt_ao_docs.reserve(train_samples.size());
  for (const auto& s : train_samples) {
    code_docs.push_back(&s.code_tokens);
    comment_docs.push_back(&s.comment_tokens);
    sbt_ao_docs.push_back(sbt_to_ao(s.sbt_tokens));
  }
  std::vector<const TokenSeq*> sbt_docs;
  for (const auto& d : sbt_ao_docs) sbt_docs.push_back(&d);

  RefineModel model(config,
                    Vocabulary::build(code_docs, static_cast<std::size_t>(config.code_vocab_cap)),
                    Vocabulary::build(sbt_docs, static_cast<std::size_t>(config.sbt_vocab_cap)),
                    Vocabulary::build(comment_docs,
                                      static_cast<std::size_t>(config.comment_vocab_cap)));

  TrainStageResult result;
  result.train = train_model(model, train_samples, train_pairs, valid_samples, valid_pairs);
  result.checkpoint_path = checkpoint_path;
  model.save_file(checkpoint_path);

  ConfigEcho echo = echo_model_config(config);
  echo["best_epoch"] = std::to_string(result.train.best_epoch);
  if (!result.train.epochs.empty()) {
    echo["final_train_loss"] = fmt_double(result.train.epochs.back().train_loss);
  }
  write_manifest(checkpoint_path, "train", echo, config.seed,
                 {train_path, valid_path, train_pairs_path, valid_pairs_path},
                 elapsed_ms(start));
  return result;
}

void stage_generate(const std::string& checkpoint_path, const std::string& queries_path,
                    const std::string& pairs_path, const std::string& train_path,
                    ExemplarMode mode, std::int64_t beam_size, std::uint64_t seed,
                    const std::string& out_path) {
  auto start = Clock::now();
  auto model = RefineModel::load_file(checkpoint_path);
  auto queries = load_samples(queries_path);
  auto train_samples = load_samples(train_path);
  std::vector<ExemplarPair> pairs;
  if (!pairs_path.empty()) pairs = load_pairs(pairs_path);
  std::unordered_map<std::uint64_t, const ExemplarPair*> lookup;
  for (const auto& pair : pairs) lookup[pair.query_id] = &pair;

  std::mt19937_64 rng(mix64(seed ^ 0x67656e));
  std::vector<std::pair<std::uint64_t, TokenSeq>> predictions;
  predictions.reserve(queries.size());
  for (const auto& query : queries) {
    auto it = lookup.find(query.id);
    auto resolved = resolve_exemplar(query, it == lookup.end() ? nullptr : it->second,
                                     train_samples, mode, rng);
    auto inputs =
        model.prepare_inputs(query, resolved.similar_code, resolved.exemplar_comment);
    predictions.emplace_back(query.id, model.generate(inputs, beam_size));
  }
  save_predictions(out_path, predictions);
  ConfigEcho echo = {{"exemplar_mode", exemplar_mode_name(mode)},
                     {"beam_size", std::to_string(beam_size)},
                     {"queries", std::to_string(queries.size())}};
  write_manifest(out_path, "generate", echo, seed,
                 {checkpoint_path, queries_path, pairs_path, train_path},
                 elapsed_ms(start));
}

void stage_evaluate(const std::string& predictions_path, const std::string& references_path,
                    const std::string& report_path, const EvaluateOptions& options) {
  auto start = Clock::now();
  auto predictions = load_predictions(predictions_path);
  auto reference_samples = load_samples(references_path);
  auto ordered = reference_order(predictions, reference_samples);

  std::vector<TokenSeq> candidates, references;
  candidates.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    candidates.push_back(predictions[i].second);
    references.push_back(ordered[i]->comment_tokens);
  }
  BleuReport report = corpus_bleu(candidates, references);

  {
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw DataError("cannot write report: " + report_path);
    out << "composite " << score_str(report.composite) << '\n';
    for (std::size_t n = 0; n < report.bleu_n.size(); ++n) {
      out << "bleu" << (n + 1) << ' ' << score_str(report.bleu_n[n]) << '\n';
    }
    out << "brevity_penalty " << score_str(report.brevity_penalty) << '\n';
    for (std::size_t n = 0; n < report.precision.size(); ++n) {
      out << "p" << (n + 1) << ' ' << score_str(report.precision[n]) << '\n';
    }
    out << "candidate_len " << report.candidate_len << '\n';
    out << "reference_len " << report.reference_len << '\n';
    out << "pairs " << candidates.size() << '\n';
  }

  if (!options.length_report_path.empty()) {
    std::vector<std::uint64_t> lengths;
    lengths.reserve(candidates.size());
    for (const Sample* s : ordered) {
      lengths.push_back(options.length_by == "code" ? s->code_tokens.size()
                                                    : s->comment_tokens.size());
    }
    auto rows = length_bucket_report(candidates, references, lengths, options.bucket_width);
    std::ofstream out(options.length_report_path, std::ios::binary);
    if (!out) throw DataError("cannot write length report");
    for (const auto& row : rows) {
      nlohmann::json line = {
          {"length", row.length}, {"mean_bleu", row.mean_bleu}, {"count", row.count}};
      out << line.dump() << '\n';
    }
  }

  if (!options.lowfreq_report_path.empty()) {
    if (options.train_path.empty()) {
      throw DataError("low-frequency report needs the training sample file");
    }
    auto train_samples = load_samples(options.train_path);
    std::map<std::string, std::uint64_t> freq;
    for (const auto& s : train_samples) {
      for (const auto& token : s.comment_tokens) freq[token] += 1;
    }
    auto rows = low_freq_report(candidates, references, freq);
    std::ofstream out(options.lowfreq_report_path, std::ios::binary);
    if (!out) throw DataError("cannot write low-frequency report");
    for (const auto& row : rows) {
      nlohmann::json line = {{"threshold", row.threshold},
                             {"matched", row.matched},
                             {"reference", row.reference}};
      out << line.dump() << '\n';
    }
  }

  ConfigEcho echo = {{"pairs", std::to_string(candidates.size())},
                     {"composite", score_str(report.composite)}};
  write_manifest(report_path, "evaluate", echo, 0, {predictions_path, references_path},
                 elapsed_ms(start));
}

void stage_baseline(const std::string& train_path, const std::string& queries_path,
                    const BaselineOptions& options, const std::string& out_path) {
  auto start = Clock::now();
  auto train_samples = load_samples(train_path);
  auto queries = load_samples(queries_path);
  std::vector<std::pair<std::uint64_t, TokenSeq>> predictions;
  predictions.reserve(queries.size());

  if (options.engine == "retrieve") {
    auto index = Bm25Index::build(train_samples);
    for (const auto& query : queries) {
      predictions.emplace_back(query.id,
                               retrieve_only(index, train_samples, query, options.exclude_self));
    }
  } else if (options.engine == "vsm") {
    auto model = VsmRetriever::fit(train_samples);
    for (const auto& query : queries) {
      std::optional<std::uint64_t> exclude;
      if (options.exclude_self) exclude = query.id;
      predictions.emplace_back(query.id, model.retrieve_comment(query.code_tokens, exclude));
    }
  } else if (options.engine == "lsi") {
    auto model = LsiRetriever::fit(train_samples, options.lsi_dim, options.seed);
    for (const auto& query : queries) {
      std::optional<std::uint64_t> exclude;
      if (options.exclude_self) exclude = query.id;
      predictions.emplace_back(query.id, model.retrieve_comment(query.code_tokens, exclude));
    }
  } else if (options.engine == "nngen") {
    auto model = NnGenRetriever::fit(train_samples, options.nngen_k);
    for (const auto& query : queries) {
      std::optional<std::uint64_t> exclude;
      if (options.exclude_self) exclude = query.id;
      predictions.emplace_back(query.id, model.retrieve_comment(query.code_tokens, exclude));
    }
  } else {
    throw DataError("unknown baseline engine: " + options.engine);
  }

  save_predictions(out_path, predictions);
  ConfigEcho echo = {{"engine", options.engine},
                     {"lsi_dim", std::to_string(options.lsi_dim)},
                     {"nngen_k", std::to_string(options.nngen_k)},
                     {"exclude_self", options.exclude_self ? "true" : "false"}};
  write_manifest(out_path, "baseline", echo, options.seed, {train_path, queries_path},
                 elapsed_ms(start));
}

void save_predictions(const std::string& path,
                      const std::vector<std::pair<std::uint64_t, TokenSeq>>& predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write predictions: " + path);
  for (const auto& [id, tokens] : predictions) {
    out << id << '\t' << join(tokens) << '\n';
  }
}

std::vector<std::pair<std::uint64_t, TokenSeq>> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions: " + path);
  std::vector<std::pair<std::uint64_t, TokenSeq>> predictions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("predictions: missing tab on line " + std::to_string(line_no));
    }
    predictions.emplace_back(std::stoull(line.substr(0, tab)),
                             split_ws(line.substr(tab + 1)));
  }
  return predictions;
}

}  // namespace excom
