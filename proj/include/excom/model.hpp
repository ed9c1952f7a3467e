#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "excom/autodiff.hpp"
#include "excom/bm25.hpp"
#include "excom/corpus.hpp"
#include "excom/vocab.hpp"

namespace excom {

struct ModelConfig {
  std::int64_t embed_dim = 100;
  std::int64_t hidden_dim = 256;      // per direction; decoder runs at 2x
  std::int64_t attn_dim = 0;          // alignment MLP width; 0 = hidden_dim
  std::int64_t out_hidden_dim = 0;    // output MLP width; 0 = decoder_dim()
  std::int64_t max_src_len = 100;
  std::int64_t max_tgt_len = 13;      // whole decoded sequence, <s> and </s> included
  double dropout = 0.2;
  std::int64_t beam_size = 5;
  std::int64_t code_vocab_cap = 30000;
  std::int64_t sbt_vocab_cap = 30000;
  std::int64_t comment_vocab_cap = 20000;
  double lr = 0.2;
  double lr_decay = 0.95;             // per epoch
  double clip_norm = 5.0;
  std::int64_t batch_size = 256;
  std::int64_t epochs = 20;
  std::uint64_t seed = 1;
  bool tie_fusion = true;             // share W_c/b_c between state and context blends
  bool select_by_bleu = false;        // checkpoint selection metric

  std::int64_t decoder_dim() const { return 2 * hidden_dim; }
  std::int64_t attn_width() const { return attn_dim > 0 ? attn_dim : hidden_dim; }
  std::int64_t out_width() const { return out_hidden_dim > 0 ? out_hidden_dim : decoder_dim(); }
  void validate() const;
};

enum class Stream { Code, Sbt, Similar, Exemplar };

enum class ExemplarMode { Retrieved, Random, None };

ExemplarMode exemplar_mode_from_string(const std::string& name);
const char* exemplar_mode_name(ExemplarMode mode);

/// Token-id views of one sample's four encoder streams, already truncated.
struct ModelInputs {
  std::vector<std::int64_t> code;
  std::vector<std::int64_t> sbt;      // SBT-AO ids
  std::vector<std::int64_t> similar;
  std::vector<std::int64_t> exemplar;
};

/// The similarity-gated four-encoder attentional encoder-decoder.
class RefineModel {
 public:
  RefineModel(ModelConfig config, Vocabulary code_vocab, Vocabulary sbt_vocab,
              Vocabulary comment_vocab);

  /// Uniform [-0.08, 0.08] initialization of every trainable tensor.
  void init_params(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& code_vocab() const { return code_vocab_; }
  const Vocabulary& sbt_vocab() const { return sbt_vocab_; }
  const Vocabulary& comment_vocab() const { return comment_vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  ModelInputs prepare_inputs(const Sample& query, const TokenSeq& similar_code,
                             const TokenSeq& exemplar_comment) const;
  /// <s> + comment truncated to max_tgt_len - 2 + </s>.
  std::vector<std::int64_t> prepare_target(const TokenSeq& comment) const;

  // --- graph builders (exposed so tests can probe each contract) ---

  struct EncoderOut {
    Tape::NodeId states = -1;  // [B, L, decoder_dim], padded steps zeroed
    Tape::NodeId final = -1;   // [B, decoder_dim]: forward last + backward first
    Tensor mask;               // [B, L] 0/1
  };

  /// Bidirectional LSTM over a ragged batch; pad positions carry state through
  /// unchanged, so padding cannot alter any real step. Empty rows are an error.
  EncoderOut encode(Tape& tape, Stream stream,
                    const std::vector<std::vector<std::int64_t>>& rows,
                    std::mt19937_64* dropout_rng = nullptr) const;

  /// sigmoid(W_sim . [h_x; h_s]) as a [B, 1] column.
  Tape::NodeId similarity_score(Tape& tape, Tape::NodeId x_final,
                                Tape::NodeId s_final) const;

  struct AttnKeys {
    Tape::NodeId projected = -1;  // [B, L, attn] key projections + bias
    Tape::NodeId states = -1;
    Tensor mask_bias;             // 0 at real steps, -1e30 at pads
  };
  AttnKeys prepare_attention(Tape& tape, Stream stream, const EncoderOut& enc) const;

  struct Attn {
    Tape::NodeId weights = -1;  // [B, L]
    Tape::NodeId context = -1;  // [B, decoder_dim]
  };
  Attn attend(Tape& tape, Stream stream, const AttnKeys& keys,
              Tape::NodeId prev_state) const;

  /// h_c = W_c [h_x; h_t] + b_c blended with the exemplar final state by sim.
  Tape::NodeId init_decoder_state(Tape& tape, Tape::NodeId x_final, Tape::NodeId t_final,
                                  Tape::NodeId r_final, Tape::NodeId sim) const;

  /// Context combination (same W_c/b_c when tied) blended by sim.
  Tape::NodeId combine_contexts(Tape& tape, Tape::NodeId ctx_x, Tape::NodeId ctx_t,
                                Tape::NodeId ctx_r, Tape::NodeId sim) const;

  struct DecodeOut {
    Tape::NodeId h = -1;       // [B, decoder_dim]
    Tape::NodeId cell = -1;    // [B, decoder_dim]
    Tape::NodeId logits = -1;  // [B, comment vocab]
  };
  DecodeOut decode_step(Tape& tape, Tape::NodeId h_prev, Tape::NodeId cell_prev,
                        const std::vector<std::int64_t>& y_prev,
                        Tape::NodeId combined_context,
                        std::mt19937_64* dropout_rng = nullptr) const;

  struct Batch {
    std::vector<ModelInputs> inputs;
    std::vector<std::vector<std::int64_t>> targets;  // <s> ... </s>
  };

  /// Teacher-forced loss: per-sample token sum, batch mean. sim_override
  /// replaces the learned gate with a constant, for gate-limit probes.
  Tape::NodeId batch_loss(Tape& tape, const Batch& batch,
                          std::mt19937_64* dropout_rng = nullptr,
                          std::optional<double> sim_override = std::nullopt) const;

  // --- inference ---

  /// Everything generation needs after encoding one sample once.
  struct GenerationContext {
    Tensor states_x, states_t, states_r;  // [L, decoder_dim]
    Tensor keys_x, keys_t, keys_r;        // [L, attn]
    double sim = 0.5;
    std::vector<double> init_h;           // decoder_dim
  };
  GenerationContext make_generation_context(
      const ModelInputs& inputs, std::optional<double> sim_override = std::nullopt) const;

  struct DecoderState {
    std::vector<double> h, cell;
  };

  /// One decoder step for a batch of live hypotheses; returns the new states
  /// and per-row log-probabilities over the comment vocabulary.
  std::pair<std::vector<DecoderState>, std::vector<std::vector<double>>> generation_step(
      const GenerationContext& ctx, const std::vector<DecoderState>& states,
      const std::vector<std::int64_t>& last_tokens) const;

  /// Beam search over the comment vocabulary; returns tokens with <s>/</s>
  /// stripped. beam_size 1 is exact greedy decoding.
  TokenSeq generate(const ModelInputs& inputs, std::int64_t beam_size,
                    std::optional<double> sim_override = std::nullopt) const;

  // --- persistence ---
  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;
  static RefineModel load(std::istream& in);
  static RefineModel load_file(const std::string& path);

 private:
  struct LstmStep {
    Tape::NodeId h, cell;
  };
  LstmStep lstm_cell(Tape& tape, const std::string& prefix, Tape::NodeId input,
                     Tape::NodeId h_prev, Tape::NodeId cell_prev) const;
  Tape::NodeId embed_rows(Tape& tape, const std::string& table,
                          const std::vector<std::int64_t>& ids,
                          std::mt19937_64* dropout_rng) const;
  Tape::NodeId maybe_dropout(Tape& tape, Tape::NodeId x, std::mt19937_64* rng) const;
  const Vocabulary& stream_vocab(Stream stream) const;
  static const char* stream_tag(Stream stream);

  ModelConfig config_;
  Vocabulary code_vocab_;
  Vocabulary sbt_vocab_;
  Vocabulary comment_vocab_;
  // Tapes bind to the store so backward can accumulate; building a graph from
  // a const model only touches the gradient buffers.
  mutable ParamStore params_;
};

/// Per-epoch record of a training run.
struct EpochStats {
  double train_loss = 0.0;
  double valid_metric = 0.0;  // mean valid loss, or negated BLEU when selecting by BLEU
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
};

/// Shuffled mini-batch SGD with per-epoch learning-rate decay and global-norm
/// clipping; keeps the parameters scoring best on the validation set. Aborts
/// with NumericError when the loss leaves the reals.
TrainResult train_model(RefineModel& model,
                        const std::vector<Sample>& train_samples,
                        const std::vector<ExemplarPair>& train_pairs,
                        const std::vector<Sample>& valid_samples,
                        const std::vector<ExemplarPair>& valid_pairs);

/// Resolves the (similar code, exemplar comment) pair for one query under the
/// given mode. Random mode draws a uniform training sample; None feeds the
/// empty-exemplar marker into both streams.
struct ResolvedExemplar {
  TokenSeq similar_code;
  TokenSeq exemplar_comment;
};
ResolvedExemplar resolve_exemplar(const Sample& query, const ExemplarPair* pair,
                                  const std::vector<Sample>& train_samples,
                                  ExemplarMode mode, std::mt19937_64& rng);

}  // namespace excom
