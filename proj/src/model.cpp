#include "excom/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "excom/beam.hpp"
#include "excom/binio.hpp"
#include "excom/bleu.hpp"
#include "excom/java_parser.hpp"

namespace excom {

namespace {
constexpr char kCheckpointMagic[8] = {'E', 'X', 'C', 'K', 'P', 'T', '0', '1'};
constexpr double kMaskBias = -1e30;
}  // namespace

void ModelConfig::validate() const {
  if (embed_dim <= 0 || hidden_dim <= 0 || max_src_len <= 0) {
    throw DataError("model config: dimensions must be positive");
  }
  if (max_tgt_len < 3) throw DataError("model config: max_tgt_len must fit <s>, one token, </s>");
  if (dropout < 0.0 || dropout >= 1.0) throw DataError("model config: dropout in [0,1)");
  if (beam_size < 1) throw DataError("model config: beam size must be >= 1");
  if (batch_size < 1 || epochs < 0) throw DataError("model config: bad training sizes");
}

ExemplarMode exemplar_mode_from_string(const std::string& name) {
  if (name == "retrieved") return ExemplarMode::Retrieved;
  if (name == "random") return ExemplarMode::Random;
  if (name == "none") return ExemplarMode::None;
  throw DataError("unknown exemplar mode: " + name);
}

const char* exemplar_mode_name(ExemplarMode mode) {
  switch (mode) {
    case ExemplarMode::Retrieved: return "retrieved";
    case ExemplarMode::Random: return "random";
    case ExemplarMode::None: return "none";
  }
  return "?";
}

RefineModel::RefineModel(ModelConfig config, Vocabulary code_vocab, Vocabulary sbt_vocab,
                         Vocabulary comment_vocab)
    : config_(config),
      code_vocab_(std::move(code_vocab)),
      sbt_vocab_(std::move(sbt_vocab)),
      comment_vocab_(std::move(comment_vocab)) {
  config_.validate();
}

const char* RefineModel::stream_tag(Stream stream) {
  switch (stream) {
    case Stream::Code: return "x";
    case Stream::Sbt: return "t";
    case Stream::Similar: return "s";
    case Stream::Exemplar: return "r";
  }
  return "?";
}

const Vocabulary& RefineModel::stream_vocab(Stream stream) const {
  switch (stream) {
    case Stream::Code:
    case Stream::Similar:
      return code_vocab_;
    case Stream::Sbt:
      return sbt_vocab_;
    case Stream::Exemplar:
      return comment_vocab_;
  }
  return code_vocab_;
}

void RefineModel::init_params(std::uint64_t seed) {
  params_ = ParamStore();
  std::mt19937_64 rng(seed);
  const std::int64_t E = config_.embed_dim;
  const std::int64_t H = config_.hidden_dim;
  const std::int64_t D = config_.decoder_dim();
  const std::int64_t A = config_.attn_width();
  const std::int64_t G = config_.out_width();

  params_.add("emb.x", {code_vocab_.size(), E}, rng);
  params_.add("emb.t", {sbt_vocab_.size(), E}, rng);
  params_.add("emb.s", {code_vocab_.size(), E}, rng);
  params_.add("emb.r", {comment_vocab_.size(), E}, rng);
  params_.add("emb.y", {comment_vocab_.size(), E}, rng);
  for (const char* enc : {"x", "t", "s", "r"}) {
    for (const char* dir : {"fw", "bw"}) {
      std::string prefix = std::string("enc.") + enc + "." + dir;
      params_.add(prefix + ".Wx", {E, 4 * H}, rng);
      params_.add(prefix + ".Wh", {H, 4 * H}, rng);
      params_.add(prefix + ".b", {4 * H}, rng);
    }
  }
  params_.add("sim.W", {2 * D, 1}, rng);
  params_.add("fuse.W", {2 * D, D}, rng);
  params_.add("fuse.b", {D}, rng);
  if (!config_.tie_fusion) {
    params_.add("fuse_ctx.W", {2 * D, D}, rng);
    params_.add("fuse_ctx.b", {D}, rng);
  }
  params_.add("dec.Wx", {E, 4 * D}, rng);
  params_.add("dec.Wh", {D, 4 * D}, rng);
  params_.add("dec.b", {4 * D}, rng);
  for (const char* s : {"x", "t", "r"}) {
    std::string prefix = std::string("attn.") + s;
    params_.add(prefix + ".Wq", {D, A}, rng);
    params_.add(prefix + ".Wk", {D, A}, rng);
    params_.add(prefix + ".b", {A}, rng);
    params_.add(prefix + ".v", {A}, rng);
  }
  params_.add("out.W1", {E + 2 * D, G}, rng);
  params_.add("out.b1", {G}, rng);
  params_.add("out.W2", {G, comment_vocab_.size()}, rng);
  params_.add("out.b2", {comment_vocab_.size()}, rng);
}

namespace {

TokenSeq truncated(const TokenSeq& tokens, std::int64_t cap) {
  if (static_cast<std::int64_t>(tokens.size()) <= cap) return tokens;
  return TokenSeq(tokens.begin(), tokens.begin() + cap);
}

}  // namespace

ModelInputs RefineModel::prepare_inputs(const Sample& query, const TokenSeq& similar_code,
                                        const TokenSeq& exemplar_comment) const {
  ModelInputs inputs;
  inputs.code = code_vocab_.encode(truncated(query.code_tokens, config_.max_src_len));
  inputs.sbt =
      sbt_vocab_.encode(truncated(sbt_to_ao(query.sbt_tokens), config_.max_src_len));
  inputs.similar = code_vocab_.encode(truncated(similar_code, config_.max_src_len));
  inputs.exemplar =
      comment_vocab_.encode(truncated(exemplar_comment, config_.max_src_len));
  return inputs;
}

std::vector<std::int64_t> RefineModel::prepare_target(const TokenSeq& comment) const {
  std::vector<std::int64_t> target;
  target.push_back(Vocabulary::kBos);
  for (const auto& id :
       comment_vocab_.encode(truncated(comment, config_.max_tgt_len - 2))) {
    target.push_back(id);
  }
  target.push_back(Vocabulary::kEos);
  return target;
}

Tape::NodeId RefineModel::maybe_dropout(Tape& tape, Tape::NodeId x,
                                        std::mt19937_64* rng) const {
  if (!rng || config_.dropout <= 0.0) return x;
  const Tensor& v = tape.val(x);
  Tensor mask(v.shape);
  std::bernoulli_distribution keep(1.0 - config_.dropout);
  double scale = 1.0 / (1.0 - config_.dropout);
  for (double& m : mask.data) m = keep(*rng) ? scale : 0.0;
  return tape.dropout(x, mask);
}

Tape::NodeId RefineModel::embed_rows(Tape& tape, const std::string& table,
                                     const std::vector<std::int64_t>& ids,
                                     std::mt19937_64* dropout_rng) const {
  auto emb = tape.embedding(tape.param(params_, table), ids);
  return maybe_dropout(tape, emb, dropout_rng);
}

RefineModel::LstmStep RefineModel::lstm_cell(Tape& tape, const std::string& prefix,
                                             Tape::NodeId input, Tape::NodeId h_prev,
                                             Tape::NodeId cell_prev) const {
  auto pre = tape.add_bias(
      tape.add(tape.matmul(input, tape.param(params_, prefix + ".Wx")),
               tape.matmul(h_prev, tape.param(params_, prefix + ".Wh"))),
      tape.param(params_, prefix + ".b"));
  std::int64_t H = tape.val(h_prev).dim(1);
  auto in_gate = tape.sigmoid(tape.slice_cols(pre, 0, H));
  auto forget_gate = tape.sigmoid(tape.slice_cols(pre, H, H));
  auto out_gate = tape.sigmoid(tape.slice_cols(pre, 2 * H, H));
  auto candidate = tape.tanh(tape.slice_cols(pre, 3 * H, H));
  auto cell = tape.add(tape.mul(forget_gate, cell_prev), tape.mul(in_gate, candidate));
  auto h = tape.mul(out_gate, tape.tanh(cell));
  return {h, cell};
}

RefineModel::EncoderOut RefineModel::encode(
    Tape& tape, Stream stream, const std::vector<std::vector<std::int64_t>>& rows,
    std::mt19937_64* dropout_rng) const {
  if (rows.empty()) throw DataError("encode: empty batch");
  const auto batch = static_cast<std::int64_t>(rows.size());
  std::int64_t max_len = 0;
  for (const auto& row : rows) {
    if (row.empty()) throw DataError("encode: empty sequence");
    max_len = std::max(max_len,
                       std::min<std::int64_t>(static_cast<std::int64_t>(row.size()),
                                              config_.max_src_len));
  }
  const std::int64_t H = config_.hidden_dim;
  const std::string tag = stream_tag(stream);

  Tensor mask({batch, max_len});
  for (std::int64_t b = 0; b < batch; ++b) {
    auto len = std::min<std::int64_t>(static_cast<std::int64_t>(rows[b].size()),
                                      config_.max_src_len);
    for (std::int64_t t = 0; t < len; ++t) mask.at(b, t) = 1.0;
  }

  // Per-step embeddings, shared by both directions.
  auto table = tape.param(params_, "emb." + tag);
  std::vector<Tape::NodeId> step_emb(static_cast<std::size_t>(max_len));
  for (std::int64_t t = 0; t < max_len; ++t) {
    std::vector<std::int64_t> ids(static_cast<std::size_t>(batch), Vocabulary::kPad);
    for (std::int64_t b = 0; b < batch; ++b) {
      if (mask.at(b, t) > 0.0) ids[static_cast<std::size_t>(b)] = rows[b][t];
    }
    auto emb = tape.embedding(table, ids);
    step_emb[static_cast<std::size_t>(t)] = maybe_dropout(tape, emb, dropout_rng);
  }

  auto gate_at = [&](std::int64_t t) {
    Tensor g({batch, 1});
    for (std::int64_t b = 0; b < batch; ++b) g.at(b, 0) = mask.at(b, t);
    return tape.constant(std::move(g));
  };

  // Forward and backward passes with carry-through masking: a padded step
  // leaves (h, cell) untouched, so final states match the unpadded run.
  auto run_direction = [&](const std::string& dir, bool reversed) {
    std::vector<Tape::NodeId> states(static_cast<std::size_t>(max_len));
    auto h = tape.constant(Tensor({batch, H}));
    auto cell = tape.constant(Tensor({batch, H}));
    for (std::int64_t i = 0; i < max_len; ++i) {
      std::int64_t t = reversed ? max_len - 1 - i : i;
      auto step = lstm_cell(tape, "enc." + tag + "." + dir,
                            step_emb[static_cast<std::size_t>(t)], h, cell);
      auto gate = gate_at(t);
      h = tape.row_gate_blend(gate, step.h, h);
      cell = tape.row_gate_blend(gate, step.cell, cell);
      states[static_cast<std::size_t>(t)] = h;
    }
    return std::make_pair(states, h);
  };
  auto [fw_states, fw_final] = run_direction("fw", false);
  auto [bw_states, bw_final] = run_direction("bw", true);

  std::vector<Tape::NodeId> steps(static_cast<std::size_t>(max_len));
  for (std::int64_t t = 0; t < max_len; ++t) {
    auto cat = tape.concat_cols({fw_states[static_cast<std::size_t>(t)],
                                 bw_states[static_cast<std::size_t>(t)]});
    // Zero out padded positions so attention sums ignore them exactly.
    Tensor keep({batch, 2 * H});
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t c = 0; c < 2 * H; ++c) keep.at(b, c) = mask.at(b, t);
    }
    steps[static_cast<std::size_t>(t)] = tape.mul(cat, tape.constant(std::move(keep)));
  }

  EncoderOut out;
  out.states = tape.stack_rows(steps);
  out.final = tape.concat_cols({fw_final, bw_final});
  out.mask = std::move(mask);
  return out;
}

Tape::NodeId RefineModel::similarity_score(Tape& tape, Tape::NodeId x_final,
                                           Tape::NodeId s_final) const {
  auto cat = tape.concat_cols({x_final, s_final});
  return tape.sigmoid(tape.matmul(cat, tape.param(params_, "sim.W")));
}

RefineModel::AttnKeys RefineModel::prepare_attention(Tape& tape, Stream stream,
                                                     const EncoderOut& enc) const {
  const std::string prefix = std::string("attn.") + stream_tag(stream);
  const Tensor& states = tape.val(enc.states);
  std::int64_t batch = states.dim(0), length = states.dim(1), dim = states.dim(2);
  auto flat = tape.reshape(enc.states, {batch * length, dim});
  auto projected = tape.add_bias(tape.matmul(flat, tape.param(params_, prefix + ".Wk")),
                                 tape.param(params_, prefix + ".b"));
  AttnKeys keys;
  keys.projected = tape.reshape(projected, {batch, length, config_.attn_width()});
  keys.states = enc.states;
  keys.mask_bias = Tensor({batch, length});
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t l = 0; l < length; ++l) {
      keys.mask_bias.at(b, l) = enc.mask.at(b, l) > 0.0 ? 0.0 : kMaskBias;
    }
  }
  return keys;
}

RefineModel::Attn RefineModel::attend(Tape& tape, Stream stream, const AttnKeys& keys,
                                      Tape::NodeId prev_state) const {
  const std::string prefix = std::string("attn.") + stream_tag(stream);
  auto query = tape.matmul(prev_state, tape.param(params_, prefix + ".Wq"));
  auto scores =
      tape.attention_scores(query, keys.projected, tape.param(params_, prefix + ".v"));
  auto masked = tape.add(scores, tape.constant(keys.mask_bias));
  Attn attn;
  attn.weights = tape.softmax(masked);
  attn.context = tape.attention_context(attn.weights, keys.states);
  return attn;
}

Tape::NodeId RefineModel::init_decoder_state(Tape& tape, Tape::NodeId x_final,
                                             Tape::NodeId t_final, Tape::NodeId r_final,
                                             Tape::NodeId sim) const {
  auto fused = tape.add_bias(
      tape.matmul(tape.concat_cols({x_final, t_final}), tape.param(params_, "fuse.W")),
      tape.param(params_, "fuse.b"));
  return tape.row_gate_blend(sim, r_final, fused);
}

Tape::NodeId RefineModel::combine_contexts(Tape& tape, Tape::NodeId ctx_x,
                                           Tape::NodeId ctx_t, Tape::NodeId ctx_r,
                                           Tape::NodeId sim) const {
  const char* w_name = config_.tie_fusion ? "fuse.W" : "fuse_ctx.W";
  const char* b_name = config_.tie_fusion ? "fuse.b" : "fuse_ctx.b";
  auto fused = tape.add_bias(
      tape.matmul(tape.concat_cols({ctx_x, ctx_t}), tape.param(params_, w_name)),
      tape.param(params_, b_name));
  return tape.row_gate_blend(sim, ctx_r, fused);
}

RefineModel::DecodeOut RefineModel::decode_step(Tape& tape, Tape::NodeId h_prev,
                                                Tape::NodeId cell_prev,
                                                const std::vector<std::int64_t>& y_prev,
                                                Tape::NodeId combined_context,
                                                std::mt19937_64* dropout_rng) const {
  auto emb = embed_rows(tape, "emb.y", y_prev, dropout_rng);
  auto step = lstm_cell(tape, "dec", emb, h_prev, cell_prev);
  auto features = tape.concat_cols({emb, step.h, combined_context});
  auto hidden = tape.tanh(tape.add_bias(tape.matmul(features, tape.param(params_, "out.W1")),
                                        tape.param(params_, "out.b1")));
  hidden = maybe_dropout(tape, hidden, dropout_rng);
  auto logits = tape.add_bias(tape.matmul(hidden, tape.param(params_, "out.W2")),
                              tape.param(params_, "out.b2"));
  return {step.h, step.cell, logits};
}

Tape::NodeId RefineModel::batch_loss(Tape& tape, const Batch& batch,
                                     std::mt19937_64* dropout_rng,
                                     std::optional<double> sim_override) const {
  if (batch.inputs.empty() || batch.inputs.size() != batch.targets.size()) {
    throw DataError("batch_loss: misaligned batch");
  }
  const auto size = static_cast<std::int64_t>(batch.inputs.size());
  auto rows_of = [&](std::vector<std::int64_t> ModelInputs::*member) {
    std::vector<std::vector<std::int64_t>> rows;
    rows.reserve(batch.inputs.size());
    for (const auto& inputs : batch.inputs) rows.push_back(inputs.*member);
    return rows;
  };
  auto enc_x = encode(tape, Stream::Code, rows_of(&ModelInputs::code), dropout_rng);
  auto enc_t = encode(tape, Stream::Sbt, rows_of(&ModelInputs::sbt), dropout_rng);
  auto enc_s = encode(tape, Stream::Similar, rows_of(&ModelInputs::similar), dropout_rng);
  auto enc_r = encode(tape, Stream::Exemplar, rows_of(&ModelInputs::exemplar), dropout_rng);

  Tape::NodeId sim;
  if (sim_override) {
    Tensor s({size, 1});
    for (std::int64_t b = 0; b < size; ++b) s.at(b, 0) = *sim_override;
    sim = tape.constant(std::move(s));
  } else {
    sim = similarity_score(tape, enc_x.final, enc_s.final);
  }

  auto h = init_decoder_state(tape, enc_x.final, enc_t.final, enc_r.final, sim);
  auto cell = tape.constant(Tensor({size, config_.decoder_dim()}));
  auto keys_x = prepare_attention(tape, Stream::Code, enc_x);
  auto keys_t = prepare_attention(tape, Stream::Sbt, enc_t);
  auto keys_r = prepare_attention(tape, Stream::Exemplar, enc_r);

  std::int64_t max_steps = 0;
  for (const auto& target : batch.targets) {
    if (target.size() < 2) throw DataError("batch_loss: target needs <s> and </s>");
    max_steps = std::max(max_steps, static_cast<std::int64_t>(target.size()) - 1);
  }

  Tape::NodeId per_sample_sum = -1;
  for (std::int64_t step = 0; step < max_steps; ++step) {
    std::vector<std::int64_t> y_prev(static_cast<std::size_t>(size), Vocabulary::kPad);
    std::vector<std::int64_t> y_true(static_cast<std::size_t>(size), Vocabulary::kPad);
    std::vector<double> step_mask(static_cast<std::size_t>(size), 0.0);
    for (std::int64_t b = 0; b < size; ++b) {
      const auto& target = batch.targets[static_cast<std::size_t>(b)];
      if (step + 1 < static_cast<std::int64_t>(target.size())) {
        y_prev[static_cast<std::size_t>(b)] = target[static_cast<std::size_t>(step)];
        y_true[static_cast<std::size_t>(b)] = target[static_cast<std::size_t>(step + 1)];
        step_mask[static_cast<std::size_t>(b)] = 1.0;
      }
    }
    auto ctx_x = attend(tape, Stream::Code, keys_x, h);
    auto ctx_t = attend(tape, Stream::Sbt, keys_t, h);
    auto ctx_r = attend(tape, Stream::Exemplar, keys_r, h);
    auto context = combine_contexts(tape, ctx_x.context, ctx_t.context, ctx_r.context, sim);
    auto out = decode_step(tape, h, cell, y_prev, context, dropout_rng);
    h = out.h;
    cell = out.cell;
    auto ce = tape.cross_entropy_rows(out.logits, y_true);
    auto masked = tape.mul(ce, tape.constant(Tensor::row(std::move(step_mask))));
    per_sample_sum = per_sample_sum < 0 ? masked : tape.add(per_sample_sum, masked);
  }
  return tape.scale(tape.sum(per_sample_sum), 1.0 / static_cast<double>(size));
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

Tensor drop_batch_dim(const Tensor& t) {
  // [1, L, D] -> [L, D]
  return Tensor({t.dim(1), t.dim(2)}, t.data);
}

Tensor tile_rows(const Tensor& t, std::int64_t copies) {
  // [L, D] -> [copies, L, D]
  Tensor out({copies, t.dim(0), t.dim(1)});
  for (std::int64_t r = 0; r < copies; ++r) {
    std::copy(t.data.begin(), t.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(r * t.numel()));
  }
  return out;
}

}  // namespace

RefineModel::GenerationContext RefineModel::make_generation_context(
    const ModelInputs& inputs, std::optional<double> sim_override) const {
  Tape tape;
  auto enc_x = encode(tape, Stream::Code, {inputs.code});
  auto enc_t = encode(tape, Stream::Sbt, {inputs.sbt});
  auto enc_s = encode(tape, Stream::Similar, {inputs.similar});
  auto enc_r = encode(tape, Stream::Exemplar, {inputs.exemplar});

  GenerationContext ctx;
  if (sim_override) {
    ctx.sim = *sim_override;
  } else {
    ctx.sim = tape.val(similarity_score(tape, enc_x.final, enc_s.final)).at(0, 0);
  }
  auto sim_node = tape.constant(Tensor({1, 1}, {ctx.sim}));
  auto h0 = init_decoder_state(tape, enc_x.final, enc_t.final, enc_r.final, sim_node);
  ctx.init_h = tape.val(h0).data;

  auto keys_x = prepare_attention(tape, Stream::Code, enc_x);
  auto keys_t = prepare_attention(tape, Stream::Sbt, enc_t);
  auto keys_r = prepare_attention(tape, Stream::Exemplar, enc_r);
  ctx.states_x = drop_batch_dim(tape.val(enc_x.states));
  ctx.states_t = drop_batch_dim(tape.val(enc_t.states));
  ctx.states_r = drop_batch_dim(tape.val(enc_r.states));
  ctx.keys_x = drop_batch_dim(tape.val(keys_x.projected));
  ctx.keys_t = drop_batch_dim(tape.val(keys_t.projected));
  ctx.keys_r = drop_batch_dim(tape.val(keys_r.projected));
  return ctx;
}

std::pair<std::vector<RefineModel::DecoderState>, std::vector<std::vector<double>>>
RefineModel::generation_step(const GenerationContext& ctx,
                             const std::vector<DecoderState>& states,
                             const std::vector<std::int64_t>& last_tokens) const {
  const auto rows = static_cast<std::int64_t>(states.size());
  const std::int64_t D = config_.decoder_dim();
  Tape tape;
  Tensor h_prev({rows, D}), cell_prev({rows, D});
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto& s = states[static_cast<std::size_t>(r)];
    std::copy(s.h.begin(), s.h.end(), h_prev.data.begin() + static_cast<std::ptrdiff_t>(r * D));
    std::copy(s.cell.begin(), s.cell.end(),
              cell_prev.data.begin() + static_cast<std::ptrdiff_t>(r * D));
  }
  auto h = tape.constant(std::move(h_prev));
  auto cell = tape.constant(std::move(cell_prev));

  auto sim_col = [&] {
    Tensor s({rows, 1});
    for (std::int64_t r = 0; r < rows; ++r) s.at(r, 0) = ctx.sim;
    return tape.constant(std::move(s));
  }();

  auto attend_tiled = [&](Stream stream, const Tensor& keys, const Tensor& enc_states) {
    AttnKeys tiled;
    tiled.projected = tape.constant(tile_rows(keys, rows));
    tiled.states = tape.constant(tile_rows(enc_states, rows));
    tiled.mask_bias = Tensor({rows, keys.dim(0)});  // single sample: nothing padded
    return attend(tape, stream, tiled, h);
  };
  auto ctx_x = attend_tiled(Stream::Code, ctx.keys_x, ctx.states_x);
  auto ctx_t = attend_tiled(Stream::Sbt, ctx.keys_t, ctx.states_t);
  auto ctx_r = attend_tiled(Stream::Exemplar, ctx.keys_r, ctx.states_r);
  auto context = combine_contexts(tape, ctx_x.context, ctx_t.context, ctx_r.context, sim_col);
  auto out = decode_step(tape, h, cell, last_tokens, context);

  std::vector<DecoderState> next(static_cast<std::size_t>(rows));
  const Tensor& new_h = tape.val(out.h);
  const Tensor& new_cell = tape.val(out.cell);
  for (std::int64_t r = 0; r < rows; ++r) {
    auto& s = next[static_cast<std::size_t>(r)];
    s.h.assign(new_h.data.begin() + static_cast<std::ptrdiff_t>(r * D),
               new_h.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * D));
    s.cell.assign(new_cell.data.begin() + static_cast<std::ptrdiff_t>(r * D),
                  new_cell.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * D));
  }

  const Tensor& logits = tape.val(out.logits);
  std::int64_t vocab = logits.dim(1);
  std::vector<std::vector<double>> logprobs(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = logits.data.data() + r * vocab;
    double max_x = x[0];
    for (std::int64_t v = 1; v < vocab; ++v) max_x = std::max(max_x, x[v]);
    double sum = 0.0;
    for (std::int64_t v = 0; v < vocab; ++v) sum += std::exp(x[v] - max_x);
    double lse = max_x + std::log(sum);
    auto& row = logprobs[static_cast<std::size_t>(r)];
    row.resize(static_cast<std::size_t>(vocab));
    for (std::int64_t v = 0; v < vocab; ++v) row[static_cast<std::size_t>(v)] = x[v] - lse;
  }
  return {std::move(next), std::move(logprobs)};
}

TokenSeq RefineModel::generate(const ModelInputs& inputs, std::int64_t beam_size,
                               std::optional<double> sim_override) const {
  GenerationContext ctx = make_generation_context(inputs, sim_override);
  DecoderState init;
  init.h = ctx.init_h;
  init.cell.assign(static_cast<std::size_t>(config_.decoder_dim()), 0.0);
  auto step = [&](const std::vector<DecoderState>& states,
                  const std::vector<std::int64_t>& last) {
    return generation_step(ctx, states, last);
  };
  auto ids = beam_search(std::move(init), Vocabulary::kBos, Vocabulary::kEos,
                         config_.max_tgt_len, beam_size, step);
  TokenSeq out;
  for (auto id : ids) {
    if (id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
    out.push_back(comment_vocab_.token(id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void RefineModel::save(std::ostream& out) const {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_i64(out, config_.embed_dim);
  write_i64(out, config_.hidden_dim);
  write_i64(out, config_.attn_dim);
  write_i64(out, config_.out_hidden_dim);
  write_i64(out, config_.max_src_len);
  write_i64(out, config_.max_tgt_len);
  write_f64(out, config_.dropout);
  write_i64(out, config_.beam_size);
  write_i64(out, config_.code_vocab_cap);
  write_i64(out, config_.sbt_vocab_cap);
  write_i64(out, config_.comment_vocab_cap);
  write_f64(out, config_.lr);
  write_f64(out, config_.lr_decay);
  write_f64(out, config_.clip_norm);
  write_i64(out, config_.batch_size);
  write_i64(out, config_.epochs);
  write_u64(out, config_.seed);
  write_u64(out, config_.tie_fusion ? 1 : 0);
  write_u64(out, config_.select_by_bleu ? 1 : 0);
  for (const Vocabulary* vocab : {&code_vocab_, &sbt_vocab_, &comment_vocab_}) {
    std::ostringstream table;
    vocab->save(table);
    write_str(out, table.str());
  }
  params_.save(out);
}

void RefineModel::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  save(out);
}

RefineModel RefineModel::load(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("checkpoint: bad magic; not a model file");
  }
  ModelConfig config;
  config.embed_dim = read_i64(in);
  config.hidden_dim = read_i64(in);
  config.attn_dim = read_i64(in);
  config.out_hidden_dim = read_i64(in);
  config.max_src_len = read_i64(in);
  config.max_tgt_len = read_i64(in);
  config.dropout = read_f64(in);
  config.beam_size = read_i64(in);
  config.code_vocab_cap = read_i64(in);
  config.sbt_vocab_cap = read_i64(in);
  config.comment_vocab_cap = read_i64(in);
  config.lr = read_f64(in);
  config.lr_decay = read_f64(in);
  config.clip_norm = read_f64(in);
  config.batch_size = read_i64(in);
  config.epochs = read_i64(in);
  config.seed = read_u64(in);
  config.tie_fusion = read_u64(in) != 0;
  config.select_by_bleu = read_u64(in) != 0;
  std::vector<Vocabulary> vocabs;
  for (int i = 0; i < 3; ++i) {
    std::istringstream table(read_str(in));
    vocabs.push_back(Vocabulary::load(table));
  }
  RefineModel model(config, std::move(vocabs[0]), std::move(vocabs[1]),
                    std::move(vocabs[2]));
  model.params_ = ParamStore::load(in);
  return model;
}

RefineModel RefineModel::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return load(in);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

std::unordered_map<std::uint64_t, const ExemplarPair*> pair_lookup(
    const std::vector<ExemplarPair>& pairs) {
  std::unordered_map<std::uint64_t, const ExemplarPair*> map;
  for (const auto& pair : pairs) map[pair.query_id] = &pair;
  return map;
}

const Sample* find_sample(const std::vector<Sample>& samples, std::int64_t id) {
  for (const auto& s : samples) {
    if (static_cast<std::int64_t>(s.id) == id) return &s;
  }
  return nullptr;
}

}  // namespace

ResolvedExemplar resolve_exemplar(const Sample& query, const ExemplarPair* pair,
                                  const std::vector<Sample>& train_samples,
                                  ExemplarMode mode, std::mt19937_64& rng) {
  ResolvedExemplar resolved;
  switch (mode) {
    case ExemplarMode::Retrieved: {
      if (!pair) throw DataError("no exemplar pair for sample " + std::to_string(query.id));
      if (pair->similar_id < 0) {
        resolved.similar_code = kEmptyExemplar;
        resolved.exemplar_comment = kEmptyExemplar;
      } else {
        const Sample* similar = find_sample(train_samples, pair->similar_id);
        if (!similar) {
          throw DataError("exemplar pair points at unknown sample " +
                          std::to_string(pair->similar_id));
        }
        resolved.similar_code = similar->code_tokens;
        resolved.exemplar_comment = pair->exemplar_tokens;
      }
      break;
    }
    case ExemplarMode::Random: {
      if (train_samples.empty()) throw DataError("random exemplar mode needs training samples");
      std::uniform_int_distribution<std::size_t> pick(0, train_samples.size() - 1);
      const Sample& donor = train_samples[pick(rng)];
      resolved.similar_code = donor.code_tokens;
      resolved.exemplar_comment = donor.comment_tokens;
      break;
    }
    case ExemplarMode::None:
      resolved.similar_code = kEmptyExemplar;
      resolved.exemplar_comment = kEmptyExemplar;
      break;
  }
  return resolved;
}

namespace {

RefineModel::Batch assemble_batch(const RefineModel& model,
                                  const std::vector<Sample>& samples,
                                  const std::vector<std::size_t>& order,
                                  std::size_t begin, std::size_t end,
                                  const std::unordered_map<std::uint64_t, const ExemplarPair*>& pairs,
                                  const std::vector<Sample>& train_samples,
                                  std::mt19937_64& rng) {
  RefineModel::Batch batch;
  for (std::size_t i = begin; i < end; ++i) {
    const Sample& sample = samples[order[i]];
    auto it = pairs.find(sample.id);
    auto resolved =
        resolve_exemplar(sample, it == pairs.end() ? nullptr : it->second, train_samples,
                         ExemplarMode::Retrieved, rng);
    batch.inputs.push_back(
        model.prepare_inputs(sample, resolved.similar_code, resolved.exemplar_comment));
    batch.targets.push_back(model.prepare_target(sample.comment_tokens));
  }
  return batch;
}

double evaluate_valid_loss(const RefineModel& model, const std::vector<Sample>& valid,
                           const std::unordered_map<std::uint64_t, const ExemplarPair*>& pairs,
                           const std::vector<Sample>& train_samples,
                           std::size_t batch_size) {
  if (valid.empty()) return 0.0;
  std::vector<std::size_t> order(valid.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(0);  // retrieved mode ignores it
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < valid.size(); begin += batch_size) {
    std::size_t end = std::min(valid.size(), begin + batch_size);
    auto batch = assemble_batch(model, valid, order, begin, end, pairs, train_samples, rng);
    Tape tape;
    total += tape.val(model.batch_loss(tape, batch)).at(0);
    ++batches;
  }
  return total / static_cast<double>(batches);
}

double evaluate_valid_bleu(const RefineModel& model, const std::vector<Sample>& valid,
                           const std::unordered_map<std::uint64_t, const ExemplarPair*>& pairs,
                           const std::vector<Sample>& train_samples) {
  if (valid.empty()) return 0.0;
  std::vector<TokenSeq> candidates, references;
  std::mt19937_64 rng(0);
  for (const auto& sample : valid) {
    auto it = pairs.find(sample.id);
    auto resolved =
        resolve_exemplar(sample, it == pairs.end() ? nullptr : it->second, train_samples,
                         ExemplarMode::Retrieved, rng);
    auto inputs =
        model.prepare_inputs(sample, resolved.similar_code, resolved.exemplar_comment);
    candidates.push_back(model.generate(inputs, 1));
    references.push_back(sample.comment_tokens);
  }
  return corpus_bleu(candidates, references).composite;
}

}  // namespace

TrainResult train_model(RefineModel& model,
                        const std::vector<Sample>& train_samples,
                        const std::vector<ExemplarPair>& train_pairs,
                        const std::vector<Sample>& valid_samples,
                        const std::vector<ExemplarPair>& valid_pairs) {
  const ModelConfig& config = model.config();
  if (train_samples.empty()) throw DataError("train: empty training set");
  auto train_lookup = pair_lookup(train_pairs);
  auto valid_lookup = pair_lookup(valid_pairs);

  model.init_params(config.seed);
  std::mt19937_64 shuffle_rng(mix64(config.seed ^ 0x7261696e));

  TrainResult result;
  ParamStore best_params;
  double best_metric = 0.0;
  bool have_best = false;

  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.lr * std::pow(config.lr_decay, static_cast<double>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng(mix64(config.seed + 0x9d0 + static_cast<std::uint64_t>(epoch)));

    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      std::size_t end = std::min(order.size(), begin + batch_size);
      auto batch = assemble_batch(model, train_samples, order, begin, end, train_lookup,
                                  train_samples, dropout_rng);
      Tape tape;
      auto loss = model.batch_loss(tape, batch, &dropout_rng);
      double loss_value = tape.val(loss).at(0);
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches));
      }
      tape.backward(loss);
      model.params().sgd_step(lr, config.clip_norm);
      loss_total += loss_value;
      ++batches;
    }

    EpochStats stats;
    stats.lr = lr;
    stats.train_loss = loss_total / static_cast<double>(batches);
    if (valid_samples.empty()) {
      stats.valid_metric = stats.train_loss;
    } else if (config.select_by_bleu) {
      stats.valid_metric =
          -evaluate_valid_bleu(model, valid_samples, valid_lookup, train_samples);
    } else {
      stats.valid_metric = evaluate_valid_loss(model, valid_samples, valid_lookup,
                                               train_samples, batch_size);
    }
    result.epochs.push_back(stats);
    if (!have_best || stats.valid_metric < best_metric) {
      best_metric = stats.valid_metric;
      best_params = model.params();
      have_best = true;
      result.best_epoch = static_cast<std::size_t>(epoch);
    }
  }
  if (have_best) model.params() = best_params;
  return result;
}

}  // namespace excom
