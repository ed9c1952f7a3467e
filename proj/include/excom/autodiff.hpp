#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "excom/tensor.hpp"

namespace excom {

class Tape;

/// Named trainable tensors with accumulated gradients.
class ParamStore {
 public:
  /// Registers a parameter initialized uniformly in [-range, range].
  std::size_t add(const std::string& name, std::vector<std::int64_t> shape,
                  std::mt19937_64& rng, double range = 0.08);
  std::size_t add(const std::string& name, Tensor value);

  std::size_t slot(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  std::size_t size() const { return names_.size(); }

  const std::string& name(std::size_t slot) const { return names_[slot]; }
  Tensor& value(std::size_t slot) { return values_[slot]; }
  const Tensor& value(std::size_t slot) const { return values_[slot]; }
  Tensor& value(const std::string& name) { return values_[slot(name)]; }
  const Tensor& value(const std::string& name) const { return values_[slot(name)]; }
  Tensor& grad(std::size_t slot) { return grads_[slot]; }
  const Tensor& grad(std::size_t slot) const { return grads_[slot]; }
  const Tensor& grad(const std::string& name) const { return grads_[slot(name)]; }

  void zero_grads();
  double grad_norm() const;

  /// Rescales gradients if their global norm exceeds clip_norm, applies
  /// p <- p - lr * g, and zeroes the gradients.
  void sgd_step(double lr, double clip_norm);

  /// Little-endian (name, shape, float64 values) records with a version tag.
  void save(std::ostream& out) const;
  static ParamStore load(std::istream& in);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::map<std::string, std::size_t> by_name_;
};

/// Record of one forward pass; node ids are creation-ordered, which is the
/// topological order backward() walks in reverse. A tape belongs to a single
/// thread.
class Tape {
 public:
  using NodeId = std::int32_t;

  NodeId constant(Tensor value);
  NodeId param(ParamStore& store, const std::string& name);
  NodeId param(ParamStore& store, std::size_t slot);

  const Tensor& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse, then
  /// accumulates leaf gradients into their ParamStore entries. The loss node
  /// must hold a single element.
  void backward(NodeId loss);

  // --- primitives ---
  NodeId matmul(NodeId a, NodeId b);                  // [m,k] x [k,n] -> [m,n]
  NodeId add(NodeId a, NodeId b);                     // same shape
  NodeId add_bias(NodeId m, NodeId bias);             // [r,c] + [c] broadcast over rows
  NodeId mul(NodeId a, NodeId b);                     // elementwise, same shape
  NodeId scale(NodeId a, double factor);
  NodeId concat_cols(const std::vector<NodeId>& parts);  // along last axis, rank 2
  NodeId slice_cols(NodeId a, std::int64_t begin, std::int64_t count);
  NodeId reshape(NodeId a, std::vector<std::int64_t> shape);  // same element count
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId softmax(NodeId a);                           // last axis, max-subtracted
  NodeId embedding(NodeId table, const std::vector<std::int64_t>& ids);  // [V,E] -> [B,E]
  NodeId dropout(NodeId a, const Tensor& keep_mask);  // mask pre-scaled by 1/keep_prob
  /// gate[r,0] * x[r,:] + (1 - gate[r,0]) * y[r,:]; the sim-gate blend and the
  /// sequence-mask carry-through share this primitive.
  NodeId row_gate_blend(NodeId gate, NodeId x, NodeId y);
  NodeId stack_rows(const std::vector<NodeId>& steps);    // L x [B,D] -> [B,L,D]
  /// scores[b,l] = sum_a v[a] * tanh(query[b,a] + keys[b,l,a])
  NodeId attention_scores(NodeId query, NodeId keys, NodeId v);
  /// context[b,d] = sum_l weights[b,l] * values[b,l,d]
  NodeId attention_context(NodeId weights, NodeId values);
  /// Per-row -log softmax(logits)[target]; log-softmax fused for stability.
  NodeId cross_entropy_rows(NodeId logits, const std::vector<std::int64_t>& targets);
  NodeId sum(NodeId a);                               // all elements -> scalar

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, const Node&)> backward_fn;  // null for leaves
    int param_slot = -1;
    ParamStore* store = nullptr;
  };

  NodeId push(Tensor value, std::function<void(Tape&, const Node&)> backward_fn);
  Tensor& grad_ref(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

  std::vector<Node> nodes_;
};

/// Mean over unmasked positions of -log p(target); the autodiff-level loss.
/// mask entries are 0 or 1 per row; rows with mask 0 are padding.
double cross_entropy(Tape& tape, Tape::NodeId logits,
                     const std::vector<std::int64_t>& targets,
                     const std::vector<double>& mask, Tape::NodeId* loss_node);

}  // namespace excom
