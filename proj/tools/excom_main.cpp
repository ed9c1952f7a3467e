#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "excom/model.hpp"
#include "excom/pipeline.hpp"

namespace {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.

struct DimsSpec {
  std::int64_t embed = 0;
  std::int64_t hidden = 0;
};

DimsSpec parse_dims(const std::string& text) {
  std::size_t x = text.find('x');
  if (x == std::string::npos) x = text.find(',');
  if (x == std::string::npos) {
    throw CLI::ValidationError("--dims expects <embed>x<hidden>, e.g. 100x256");
  }
  DimsSpec dims;
  dims.embed = std::stoll(text.substr(0, x));
  dims.hidden = std::stoll(text.substr(x + 1));
  if (dims.embed <= 0 || dims.hidden <= 0) {
    throw CLI::ValidationError("--dims requires positive sizes");
  }
  return dims;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-based code comment generation pipeline"};
  app.set_config("--config", "", "key=value file; command-line flags win");
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string mode = "standard";
  app.add_option("--seed", seed, "global random seed")->capture_default_str();
  app.add_option("--mode", mode, "standard | challenge")
      ->check(CLI::IsMember({"standard", "challenge"}))
      ->capture_default_str();

  // --- preprocess ---
  auto* pre = app.add_subcommand("preprocess", "raw records -> train/valid/test samples");
  std::string pre_input, pre_out_dir = ".";
  double frac_train = 0.8, frac_valid = 0.1, frac_test = 0.1;
  pre->add_option("--input", pre_input, "raw record file (line-delimited JSON)")->required();
  pre->add_option("--out-dir", pre_out_dir, "output directory")->capture_default_str();
  pre->add_option("--train-frac", frac_train)->capture_default_str();
  pre->add_option("--valid-frac", frac_valid)->capture_default_str();
  pre->add_option("--test-frac", frac_test)->capture_default_str();

  // --- index ---
  auto* idx = app.add_subcommand("index", "build the BM25 index over a sample file");
  std::string idx_input, idx_out;
  idx->add_option("--input", idx_input, "training sample file")->required();
  idx->add_option("--out", idx_out, "index file")->required();

  // --- pair ---
  auto* pair = app.add_subcommand("pair", "attach the nearest exemplar to each query");
  std::string pair_index, pair_corpus, pair_queries, pair_out;
  bool pair_exclude_self = false;
  pair->add_option("--index", pair_index)->required();
  pair->add_option("--corpus", pair_corpus, "samples the index was built over")->required();
  pair->add_option("--queries", pair_queries)->required();
  pair->add_flag("--exclude-self", pair_exclude_self,
                 "drop the query itself from its results (training queries)");
  pair->add_option("--out", pair_out)->required();

  // --- train ---
  auto* train = app.add_subcommand("train", "fit the refine model");
  std::string train_train, train_valid, train_pairs, train_valid_pairs, train_ckpt;
  excom::ModelConfig config;
  std::string dims_text;
  train->add_option("--train", train_train, "training sample file")->required();
  train->add_option("--valid", train_valid, "validation sample file");
  train->add_option("--pairs", train_pairs, "training exemplar pairs")->required();
  train->add_option("--valid-pairs", train_valid_pairs, "validation exemplar pairs");
  train->add_option("--checkpoint", train_ckpt, "output checkpoint")->required();
  train->add_option("--epochs", config.epochs)->capture_default_str();
  train->add_option("--lr", config.lr)->capture_default_str();
  train->add_option("--lr-decay", config.lr_decay)->capture_default_str();
  train->add_option("--clip", config.clip_norm)->capture_default_str();
  train->add_option("--batch", config.batch_size)->capture_default_str();
  train->add_option("--dropout", config.dropout)->capture_default_str();
  train->add_option("--dims", dims_text, "<embed>x<hidden>, e.g. 100x256");
  train->add_option("--max-src-len", config.max_src_len)->capture_default_str();
  train->add_option("--max-tgt-len", config.max_tgt_len)->capture_default_str();
  train->add_option("--code-vocab", config.code_vocab_cap)->capture_default_str();
  train->add_option("--sbt-vocab", config.sbt_vocab_cap)->capture_default_str();
  train->add_option("--comment-vocab", config.comment_vocab_cap)->capture_default_str();
  bool untie_fusion = false, select_bleu = false;
  train->add_flag("--untie-fusion", untie_fusion,
                  "separate fusion weights for states and contexts");
  train->add_flag("--select-bleu", select_bleu, "pick best checkpoint by validation BLEU");

  // --- generate ---
  auto* gen = app.add_subcommand("generate", "decode comments for a query file");
  std::string gen_ckpt, gen_queries, gen_pairs, gen_train, gen_out;
  std::string exemplar_mode = "retrieved";
  std::int64_t beam = 5;
  gen->add_option("--checkpoint", gen_ckpt)->required();
  gen->add_option("--queries", gen_queries)->required();
  gen->add_option("--pairs", gen_pairs, "exemplar pairs for the queries");
  gen->add_option("--train", gen_train, "training samples (exemplar source)")->required();
  gen->add_option("--exemplar", exemplar_mode, "retrieved | random | none")
      ->check(CLI::IsMember({"retrieved", "random", "none"}))
      ->capture_default_str();
  gen->add_option("--beam", beam)->capture_default_str();
  gen->add_option("--out", gen_out, "predictions file")->required();

  // --- evaluate ---
  auto* eval = app.add_subcommand("evaluate", "score predictions against references");
  std::string eval_pred, eval_refs, eval_report;
  excom::EvaluateOptions eval_options;
  eval->add_option("--predictions", eval_pred)->required();
  eval->add_option("--references", eval_refs, "sample file with gold comments")->required();
  eval->add_option("--report", eval_report)->required();
  eval->add_option("--length-report", eval_options.length_report_path,
                   "per-length mean sentence BLEU (line-delimited JSON)");
  eval->add_option("--length-by", eval_options.length_by, "comment | code")
      ->check(CLI::IsMember({"comment", "code"}))
      ->capture_default_str();
  eval->add_option("--bucket-width", eval_options.bucket_width)->capture_default_str();
  eval->add_option("--lowfreq-report", eval_options.lowfreq_report_path,
                   "low-frequency token counts (line-delimited JSON)");
  eval->add_option("--train", eval_options.train_path,
                   "training samples; required for --lowfreq-report");

  // --- baseline ---
  auto* base = app.add_subcommand("baseline", "IR-only comment generators");
  std::string base_train, base_queries, base_out;
  excom::BaselineOptions base_options;
  base->add_option("--train", base_train)->required();
  base->add_option("--queries", base_queries)->required();
  base->add_option("--engine", base_options.engine, "retrieve | vsm | lsi | nngen")
      ->check(CLI::IsMember({"retrieve", "vsm", "lsi", "nngen"}))
      ->capture_default_str();
  base->add_option("--lsi-dim", base_options.lsi_dim)->capture_default_str();
  base->add_option("--nngen-k", base_options.nngen_k)->capture_default_str();
  base->add_flag("--exclude-self", base_options.exclude_self);
  base->add_option("--out", base_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (pre->parsed()) {
      excom::SplitSpec split{frac_train, frac_valid, frac_test, seed};
      auto result = excom::stage_preprocess(pre_input, pre_out_dir, split, mode == "challenge");
      std::printf("preprocess: read=%llu malformed=%llu skipped=%llu train=%llu valid=%llu test=%llu\n",
                  (unsigned long long)result.read, (unsigned long long)result.malformed,
                  (unsigned long long)result.skipped, (unsigned long long)result.train,
                  (unsigned long long)result.valid, (unsigned long long)result.test);
    } else if (idx->parsed()) {
      excom::stage_index(idx_input, idx_out);
      std::printf("index: wrote %s\n", idx_out.c_str());
    } else if (pair->parsed()) {
      excom::stage_pair(pair_index, pair_corpus, pair_queries, pair_exclude_self, pair_out);
      std::printf("pair: wrote %s\n", pair_out.c_str());
    } else if (train->parsed()) {
      if (!dims_text.empty()) {
        DimsSpec dims = parse_dims(dims_text);
        config.embed_dim = dims.embed;
        config.hidden_dim = dims.hidden;
      }
      config.seed = seed;
      config.tie_fusion = !untie_fusion;
      config.select_by_bleu = select_bleu;
      auto result = excom::stage_train(train_train, train_valid, train_pairs,
                                       train_valid_pairs, config, train_ckpt);
      std::printf("train: %zu epochs, best epoch %zu, checkpoint %s\n",
                  result.train.epochs.size(), result.train.best_epoch,
                  result.checkpoint_path.c_str());
      for (std::size_t e = 0; e < result.train.epochs.size(); ++e) {
        const auto& stats = result.train.epochs[e];
        std::printf("  epoch %zu: lr=%.6f train_loss=%.6f valid_metric=%.6f\n", e, stats.lr,
                    stats.train_loss, stats.valid_metric);
      }
    } else if (gen->parsed()) {
      excom::stage_generate(gen_ckpt, gen_queries, gen_pairs, gen_train,
                            excom::exemplar_mode_from_string(exemplar_mode), beam, seed,
                            gen_out);
      std::printf("generate: wrote %s\n", gen_out.c_str());
    } else if (eval->parsed()) {
      excom::stage_evaluate(eval_pred, eval_refs, eval_report, eval_options);
      std::printf("evaluate: wrote %s\n", eval_report.c_str());
    } else if (base->parsed()) {
      base_options.seed = seed;
      excom::stage_baseline(base_train, base_queries, base_options, base_out);
      std::printf("baseline: wrote %s\n", base_out.c_str());
    }
  } catch (const excom::NumericError& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
