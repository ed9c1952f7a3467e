#include "excom/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include <Eigen/Core>

#include "excom/binio.hpp"

namespace excom {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data.data(), t.dim(0), t.dim(1));
}
MatMap as_matrix_mut(Tensor& t) { return MatMap(t.data.data(), t.dim(0), t.dim(1)); }

void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DataError(std::string(op) + ": expected rank-2 tensor");
}

constexpr char kParamMagic[8] = {'E', 'X', 'P', 'S', '0', '0', '0', '1'};

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

std::size_t ParamStore::add(const std::string& name, std::vector<std::int64_t> shape,
                            std::mt19937_64& rng, double range) {
  Tensor value(std::move(shape));
  std::uniform_real_distribution<double> dist(-range, range);
  for (double& x : value.data) x = dist(rng);
  return add(name, std::move(value));
}

std::size_t ParamStore::add(const std::string& name, Tensor value) {
  if (by_name_.count(name)) throw DataError("param store: duplicate parameter " + name);
  std::size_t slot = names_.size();
  by_name_[name] = slot;
  names_.push_back(name);
  grads_.emplace_back(value.shape);
  values_.push_back(std::move(value));
  return slot;
}

std::size_t ParamStore::slot(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw DataError("param store: unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), 0.0);
}

double ParamStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& g : grads_) {
    for (double x : g.data) sq += x * x;
  }
  return std::sqrt(sq);
}

void ParamStore::sgd_step(double lr, double clip_norm) {
  double scale = 1.0;
  if (clip_norm > 0.0) {
    double norm = grad_norm();
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    auto& p = values_[i].data;
    const auto& g = grads_[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * scale * g[j];
  }
  zero_grads();
}

void ParamStore::save(std::ostream& out) const {
  out.write(kParamMagic, sizeof(kParamMagic));
  write_u64(out, names_.size());
  for (std::size_t i = 0; i < names_.size(); ++i) {
    write_u64(out, names_[i].size());
    out.write(names_[i].data(), static_cast<std::streamsize>(names_[i].size()));
    const Tensor& t = values_[i];
    write_u64(out, static_cast<std::uint64_t>(t.rank()));
    for (auto d : t.shape) write_u64(out, static_cast<std::uint64_t>(d));
    for (double x : t.data) write_f64(out, x);
  }
}

ParamStore ParamStore::load(std::istream& in) {
  char magic[sizeof(kParamMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kParamMagic, sizeof(magic)) != 0) {
    throw DataError("checkpoint: bad magic; not a parameter file");
  }
  ParamStore store;
  std::uint64_t count = read_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!in) throw DataError("checkpoint: truncated name");
    std::uint64_t rank = read_u64(in);
    std::vector<std::int64_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(read_u64(in));
    Tensor value(shape);
    for (double& x : value.data) x = read_f64(in);
    store.add(name, std::move(value));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::NodeId Tape::push(Tensor value, std::function<void(Tape&, const Node&)> backward_fn) {
  Node node;
  node.grad = Tensor(value.shape);
  node.value = std::move(value);
  node.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::constant(Tensor value) { return push(std::move(value), nullptr); }

Tape::NodeId Tape::param(ParamStore& store, const std::string& name) {
  return param(store, store.slot(name));
}

Tape::NodeId Tape::param(ParamStore& store, std::size_t slot) {
  NodeId id = push(store.value(slot), nullptr);
  nodes_.back().param_slot = static_cast<int>(slot);
  nodes_.back().store = &store;
  return id;
}

void Tape::backward(NodeId loss) {
  Node& loss_node = nodes_[static_cast<std::size_t>(loss)];
  if (loss_node.value.numel() != 1) {
    throw DataError("backward: loss must be a single element");
  }
  loss_node.grad.data[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (node.backward_fn) node.backward_fn(*this, node);
    if (node.param_slot >= 0) {
      Tensor& g = node.store->grad(static_cast<std::size_t>(node.param_slot));
      for (std::size_t j = 0; j < g.data.size(); ++j) g.data[j] += node.grad.data[j];
    }
  }
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  check_rank2(A, "matmul");
  check_rank2(B, "matmul");
  if (A.dim(1) != B.dim(0)) throw DataError("matmul: inner dimension mismatch");
  Tensor out({A.dim(0), B.dim(1)});
  as_matrix_mut(out).noalias() = as_matrix(A) * as_matrix(B);
  return push(std::move(out), [a, b](Tape& t, const Node& n) {
    ConstMatMap dC(n.grad.data.data(), n.grad.dim(0), n.grad.dim(1));
    as_matrix_mut(t.grad_ref(a)).noalias() += dC * as_matrix(t.val(b)).transpose();
    as_matrix_mut(t.grad_ref(b)).noalias() += as_matrix(t.val(a)).transpose() * dC;
  });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B)) throw DataError("add: shape mismatch");
  Tensor out(A.shape);
  for (std::int64_t i = 0; i < A.numel(); ++i) out.at(i) = A.at(i) + B.at(i);
  return push(std::move(out), [a, b](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    Tensor& db = t.grad_ref(b);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      da.at(i) += n.grad.at(i);
      db.at(i) += n.grad.at(i);
    }
  });
}

Tape::NodeId Tape::add_bias(NodeId m, NodeId bias) {
  const Tensor& M = val(m);
  const Tensor& B = val(bias);
  check_rank2(M, "add_bias");
  if (B.rank() != 1 || B.dim(0) != M.dim(1)) throw DataError("add_bias: bias shape mismatch");
  Tensor out(M.shape);
  for (std::int64_t r = 0; r < M.dim(0); ++r) {
    for (std::int64_t c = 0; c < M.dim(1); ++c) out.at(r, c) = M.at(r, c) + B.at(c);
  }
  return push(std::move(out), [m, bias](Tape& t, const Node& n) {
    Tensor& dm = t.grad_ref(m);
    Tensor& db = t.grad_ref(bias);
    for (std::int64_t r = 0; r < n.grad.dim(0); ++r) {
      for (std::int64_t c = 0; c < n.grad.dim(1); ++c) {
        dm.at(r, c) += n.grad.at(r, c);
        db.at(c) += n.grad.at(r, c);
      }
    }
  });
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B)) throw DataError("mul: shape mismatch");
  Tensor out(A.shape);
  for (std::int64_t i = 0; i < A.numel(); ++i) out.at(i) = A.at(i) * B.at(i);
  return push(std::move(out), [a, b](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    Tensor& db = t.grad_ref(b);
    const Tensor& A = t.val(a);
    const Tensor& B = t.val(b);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      da.at(i) += n.grad.at(i) * B.at(i);
      db.at(i) += n.grad.at(i) * A.at(i);
    }
  });
}

Tape::NodeId Tape::scale(NodeId a, double factor) {
  const Tensor& A = val(a);
  Tensor out(A.shape);
  for (std::int64_t i = 0; i < A.numel(); ++i) out.at(i) = A.at(i) * factor;
  return push(std::move(out), [a, factor](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) da.at(i) += n.grad.at(i) * factor;
  });
}

Tape::NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw DataError("concat_cols: no inputs");
  std::int64_t rows = val(parts[0]).dim(0);
  std::int64_t cols = 0;
  for (NodeId p : parts) {
    check_rank2(val(p), "concat_cols");
    if (val(p).dim(0) != rows) throw DataError("concat_cols: row mismatch");
    cols += val(p).dim(1);
  }
  Tensor out({rows, cols});
  std::int64_t offset = 0;
  for (NodeId p : parts) {
    const Tensor& P = val(p);
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < P.dim(1); ++c) out.at(r, offset + c) = P.at(r, c);
    }
    offset += P.dim(1);
  }
  return push(std::move(out), [parts](Tape& t, const Node& n) {
    std::int64_t offset = 0;
    for (NodeId p : parts) {
      Tensor& dp = t.grad_ref(p);
      for (std::int64_t r = 0; r < dp.dim(0); ++r) {
        for (std::int64_t c = 0; c < dp.dim(1); ++c) dp.at(r, c) += n.grad.at(r, offset + c);
      }
      offset += dp.dim(1);
    }
  });
}

Tape::NodeId Tape::slice_cols(NodeId a, std::int64_t begin, std::int64_t count) {
  const Tensor& A = val(a);
  check_rank2(A, "slice_cols");
  if (begin < 0 || begin + count > A.dim(1)) throw DataError("slice_cols: out of range");
  Tensor out({A.dim(0), count});
  for (std::int64_t r = 0; r < A.dim(0); ++r) {
    for (std::int64_t c = 0; c < count; ++c) out.at(r, c) = A.at(r, begin + c);
  }
  return push(std::move(out), [a, begin](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    for (std::int64_t r = 0; r < n.grad.dim(0); ++r) {
      for (std::int64_t c = 0; c < n.grad.dim(1); ++c) da.at(r, begin + c) += n.grad.at(r, c);
    }
  });
}

Tape::NodeId Tape::reshape(NodeId a, std::vector<std::int64_t> shape) {
  const Tensor& A = val(a);
  if (Tensor::numel_of(shape) != A.numel()) throw DataError("reshape: element count mismatch");
  Tensor out(std::move(shape), std::vector<double>(A.data));
  return push(std::move(out), [a](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    for (std::size_t i = 0; i < da.data.size(); ++i) da.data[i] += n.grad.data[i];
  });
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  const Tensor& A = val(a);
  Tensor out(A.shape);
  for (std::int64_t i = 0; i < A.numel(); ++i) {
    double x = A.at(i);
    // Branch keeps exp() off large magnitudes in either direction.
    out.at(i) = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                         : std::exp(x) / (1.0 + std::exp(x));
  }
  return push(std::move(out), [a](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      double s = n.value.at(i);
      da.at(i) += n.grad.at(i) * s * (1.0 - s);
    }
  });
}

Tape::NodeId Tape::tanh(NodeId a) {
  const Tensor& A = val(a);
  Tensor out(A.shape);
  for (std::int64_t i = 0; i < A.numel(); ++i) out.at(i) = std::tanh(A.at(i));
  return push(std::move(out), [a](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      double y = n.value.at(i);
      da.at(i) += n.grad.at(i) * (1.0 - y * y);
    }
  });
}

Tape::NodeId Tape::softmax(NodeId a) {
  const Tensor& A = val(a);
  if (A.rank() < 1) throw DataError("softmax: needs at least rank 1");
  std::int64_t cols = A.dim(A.rank() - 1);
  std::int64_t rows = A.numel() / cols;
  Tensor out(A.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = A.data.data() + r * cols;
    double* y = out.data.data() + r * cols;
    double max_x = x[0];
    for (std::int64_t c = 1; c < cols; ++c) max_x = std::max(max_x, x[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - max_x);
      sum += y[c];
    }
    for (std::int64_t c = 0; c < cols; ++c) y[c] /= sum;
  }
  return push(std::move(out), [a, rows, cols](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = n.value.data.data() + r * cols;
      const double* dy = n.grad.data.data() + r * cols;
      double dot = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      double* dx = da.data.data() + r * cols;
      for (std::int64_t c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
    }
  });
}

Tape::NodeId Tape::embedding(NodeId table, const std::vector<std::int64_t>& ids) {
  const Tensor& T = val(table);
  check_rank2(T, "embedding");
  auto rows = static_cast<std::int64_t>(ids.size());
  Tensor out({rows, T.dim(1)});
  for (std::int64_t r = 0; r < rows; ++r) {
    if (ids[static_cast<std::size_t>(r)] < 0 || ids[static_cast<std::size_t>(r)] >= T.dim(0)) {
      throw DataError("embedding: id out of range");
    }
    for (std::int64_t c = 0; c < T.dim(1); ++c) {
      out.at(r, c) = T.at(ids[static_cast<std::size_t>(r)], c);
    }
  }
  return push(std::move(out), [table, ids](Tape& t, const Node& n) {
    Tensor& dT = t.grad_ref(table);
    for (std::int64_t r = 0; r < n.grad.dim(0); ++r) {
      std::int64_t id = ids[static_cast<std::size_t>(r)];
      for (std::int64_t c = 0; c < n.grad.dim(1); ++c) dT.at(id, c) += n.grad.at(r, c);
    }
  });
}

Tape::NodeId Tape::dropout(NodeId a, const Tensor& keep_mask) {
  const Tensor& A = val(a);
  if (!A.same_shape(keep_mask)) throw DataError("dropout: mask shape mismatch");
  Tensor out(A.shape);
  for (std::int64_t i = 0; i < A.numel(); ++i) out.at(i) = A.at(i) * keep_mask.at(i);
  return push(std::move(out), [a, keep_mask](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
      da.at(i) += n.grad.at(i) * keep_mask.at(i);
    }
  });
}

Tape::NodeId Tape::row_gate_blend(NodeId gate, NodeId x, NodeId y) {
  const Tensor& G = val(gate);
  const Tensor& X = val(x);
  const Tensor& Y = val(y);
  check_rank2(X, "row_gate_blend");
  if (!X.same_shape(Y)) throw DataError("row_gate_blend: x/y shape mismatch");
  if (G.rank() != 2 || G.dim(0) != X.dim(0) || G.dim(1) != 1) {
    throw DataError("row_gate_blend: gate must be [rows, 1]");
  }
  Tensor out(X.shape);
  for (std::int64_t r = 0; r < X.dim(0); ++r) {
    double g = G.at(r, 0);
    for (std::int64_t c = 0; c < X.dim(1); ++c) {
      out.at(r, c) = g * X.at(r, c) + (1.0 - g) * Y.at(r, c);
    }
  }
  return push(std::move(out), [gate, x, y](Tape& t, const Node& n) {
    Tensor& dg = t.grad_ref(gate);
    Tensor& dx = t.grad_ref(x);
    Tensor& dy = t.grad_ref(y);
    const Tensor& G = t.val(gate);
    const Tensor& X = t.val(x);
    const Tensor& Y = t.val(y);
    for (std::int64_t r = 0; r < n.grad.dim(0); ++r) {
      double g = G.at(r, 0);
      double gsum = 0.0;
      for (std::int64_t c = 0; c < n.grad.dim(1); ++c) {
        double d = n.grad.at(r, c);
        gsum += d * (X.at(r, c) - Y.at(r, c));
        dx.at(r, c) += d * g;
        dy.at(r, c) += d * (1.0 - g);
      }
      dg.at(r, 0) += gsum;
    }
  });
}

Tape::NodeId Tape::stack_rows(const std::vector<NodeId>& steps) {
  if (steps.empty()) throw DataError("stack_rows: no inputs");
  const Tensor& first = val(steps[0]);
  check_rank2(first, "stack_rows");
  std::int64_t batch = first.dim(0);
  std::int64_t dim = first.dim(1);
  auto length = static_cast<std::int64_t>(steps.size());
  Tensor out({batch, length, dim});
  for (std::int64_t l = 0; l < length; ++l) {
    const Tensor& S = val(steps[static_cast<std::size_t>(l)]);
    if (S.dim(0) != batch || S.dim(1) != dim) throw DataError("stack_rows: shape mismatch");
    for (std::int64_t b = 0; b < batch; ++b) {
      for (std::int64_t d = 0; d < dim; ++d) {
        out.data[static_cast<std::size_t>((b * length + l) * dim + d)] = S.at(b, d);
      }
    }
  }
  return push(std::move(out), [steps, batch, dim, length](Tape& t, const Node& n) {
    for (std::int64_t l = 0; l < length; ++l) {
      Tensor& ds = t.grad_ref(steps[static_cast<std::size_t>(l)]);
      for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t d = 0; d < dim; ++d) {
          ds.at(b, d) += n.grad.data[static_cast<std::size_t>((b * length + l) * dim + d)];
        }
      }
    }
  });
}

Tape::NodeId Tape::attention_scores(NodeId query, NodeId keys, NodeId v) {
  const Tensor& Q = val(query);
  const Tensor& K = val(keys);
  const Tensor& V = val(v);
  check_rank2(Q, "attention_scores");
  if (K.rank() != 3 || V.rank() != 1) throw DataError("attention_scores: bad ranks");
  std::int64_t batch = Q.dim(0), attn = Q.dim(1), length = K.dim(1);
  if (K.dim(0) != batch || K.dim(2) != attn || V.dim(0) != attn) {
    throw DataError("attention_scores: shape mismatch");
  }
  Tensor out({batch, length});
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t l = 0; l < length; ++l) {
      const double* k = K.data.data() + (b * length + l) * attn;
      const double* q = Q.data.data() + b * attn;
      double s = 0.0;
      for (std::int64_t a = 0; a < attn; ++a) s += V.at(a) * std::tanh(q[a] + k[a]);
      out.at(b, l) = s;
    }
  }
  return push(std::move(out), [query, keys, v, batch, attn, length](Tape& t, const Node& n) {
    Tensor& dQ = t.grad_ref(query);
    Tensor& dK = t.grad_ref(keys);
    Tensor& dV = t.grad_ref(v);
    const Tensor& Q = t.val(query);
    const Tensor& K = t.val(keys);
    const Tensor& V = t.val(v);
    for (std::int64_t b = 0; b < batch; ++b) {
      const double* q = Q.data.data() + b * attn;
      double* dq = dQ.data.data() + b * attn;
      for (std::int64_t l = 0; l < length; ++l) {
        double ds = n.grad.at(b, l);
        if (ds == 0.0) continue;
        const double* k = K.data.data() + (b * length + l) * attn;
        double* dk = dK.data.data() + (b * length + l) * attn;
        for (std::int64_t a = 0; a < attn; ++a) {
          double th = std::tanh(q[a] + k[a]);
          double common = ds * V.at(a) * (1.0 - th * th);
          dq[a] += common;
          dk[a] += common;
          dV.at(a) += ds * th;
        }
      }
    }
  });
}

Tape::NodeId Tape::attention_context(NodeId weights, NodeId values) {
  const Tensor& W = val(weights);
  const Tensor& V = val(values);
  check_rank2(W, "attention_context");
  if (V.rank() != 3) throw DataError("attention_context: values must be rank 3");
  std::int64_t batch = W.dim(0), length = W.dim(1), dim = V.dim(2);
  if (V.dim(0) != batch || V.dim(1) != length) {
    throw DataError("attention_context: shape mismatch");
  }
  Tensor out({batch, dim});
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t l = 0; l < length; ++l) {
      double w = W.at(b, l);
      if (w == 0.0) continue;
      const double* row = V.data.data() + (b * length + l) * dim;
      for (std::int64_t d = 0; d < dim; ++d) out.at(b, d) += w * row[d];
    }
  }
  return push(std::move(out), [weights, values, batch, length, dim](Tape& t, const Node& n) {
    Tensor& dW = t.grad_ref(weights);
    Tensor& dV = t.grad_ref(values);
    const Tensor& W = t.val(weights);
    const Tensor& V = t.val(values);
    for (std::int64_t b = 0; b < batch; ++b) {
      const double* dctx = n.grad.data.data() + b * dim;
      for (std::int64_t l = 0; l < length; ++l) {
        const double* row = V.data.data() + (b * length + l) * dim;
        double* drow = dV.data.data() + (b * length + l) * dim;
        double w = W.at(b, l);
        double acc = 0.0;
        for (std::int64_t d = 0; d < dim; ++d) {
          acc += dctx[d] * row[d];
          drow[d] += dctx[d] * w;
        }
        dW.at(b, l) += acc;
      }
    }
  });
}

Tape::NodeId Tape::cross_entropy_rows(NodeId logits, const std::vector<std::int64_t>& targets) {
  const Tensor& L = val(logits);
  check_rank2(L, "cross_entropy_rows");
  auto rows = L.dim(0);
  auto cols = L.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != rows) {
    throw DataError("cross_entropy_rows: target count mismatch");
  }
  for (auto id : targets) {
    if (id < 0 || id >= cols) throw DataError("cross_entropy_rows: target id out of range");
  }
  Tensor out({rows});
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = L.data.data() + r * cols;
    double max_x = x[0];
    for (std::int64_t c = 1; c < cols; ++c) max_x = std::max(max_x, x[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) sum += std::exp(x[c] - max_x);
    double lse = max_x + std::log(sum);
    out.at(r) = lse - x[targets[static_cast<std::size_t>(r)]];
  }
  return push(std::move(out), [logits, targets, rows, cols](Tape& t, const Node& n) {
    Tensor& dL = t.grad_ref(logits);
    const Tensor& L = t.val(logits);
    for (std::int64_t r = 0; r < rows; ++r) {
      double dout = n.grad.at(r);
      if (dout == 0.0) continue;
      const double* x = L.data.data() + r * cols;
      double* dx = dL.data.data() + r * cols;
      double max_x = x[0];
      for (std::int64_t c = 1; c < cols; ++c) max_x = std::max(max_x, x[c]);
      double sum = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) sum += std::exp(x[c] - max_x);
      for (std::int64_t c = 0; c < cols; ++c) {
        double p = std::exp(x[c] - max_x) / sum;
        dx[c] += dout * p;
      }
      dx[targets[static_cast<std::size_t>(r)]] -= dout;
    }
  });
}

Tape::NodeId Tape::sum(NodeId a) {
  const Tensor& A = val(a);
  double total = 0.0;
  for (double x : A.data) total += x;
  return push(Tensor::scalar(total), [a](Tape& t, const Node& n) {
    Tensor& da = t.grad_ref(a);
    double d = n.grad.at(0);
    for (std::int64_t i = 0; i < da.numel(); ++i) da.at(i) += d;
  });
}

double cross_entropy(Tape& tape, Tape::NodeId logits,
                     const std::vector<std::int64_t>& targets,
                     const std::vector<double>& mask, Tape::NodeId* loss_node) {
  auto ce = tape.cross_entropy_rows(logits, targets);
  double denom = 0.0;
  for (double m : mask) denom += m;
  if (denom <= 0.0) throw DataError("cross_entropy: all positions masked");
  auto masked = tape.mul(ce, tape.constant(Tensor::row(std::vector<double>(mask))));
  auto loss = tape.scale(tape.sum(masked), 1.0 / denom);
  if (loss_node) *loss_node = loss;
  return tape.val(loss).at(0);
}

}  // namespace excom
