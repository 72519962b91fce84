#pragma once

// Minimal tape-based reverse-mode differentiation over rank-2 tensors.
//
// A Graph owns its nodes in creation order, which is always a topological
// order, so backward() is a single reverse sweep. Rows are "documents" and
// columns are "channels" throughout; a batch of queries is laid out as
// consecutive row segments of equal length.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "serank/tensor.hpp"

namespace serank {

using Mask = std::vector<bool>;

namespace ad {

enum class Op {
  leaf,
  matmul,
  add,
  mul,
  neg,
  relu,
  sigmoid,
  log,
  exp,
  scale,
  add_scalar,
  rsqrt,
  reduce_mean,
  reduce_max,
  sum,
  concat_cols,
  slice_cols,
  gather_rows,
  repeat_rows,
  reshape,
  custom,
};

enum class Reduce { mean, max };

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : g_(g), id_(id) {}

  Graph* graph() const { return g_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph* g_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardFn = std::function<void(Graph&, std::size_t self)>;

struct Node {
  Tensor value;
  Tensor grad;
  Op op = Op::leaf;
  std::vector<std::size_t> parents;
  BackwardFn backward;
  bool requires_grad = false;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf whose gradient is tracked when t.requires_grad() is set.
  Var leaf(Tensor t) {
    require_rank2(t, "leaf");
    bool rg = t.requires_grad();
    return push(Op::leaf, {}, std::move(t), nullptr, rg);
  }
  Var parameter(Tensor t) {
    t.set_requires_grad(true);
    return leaf(std::move(t));
  }
  Var constant(Tensor t) {
    t.set_requires_grad(false);
    return leaf(std::move(t));
  }

  /// Records an op result. The backward closure is dropped when no parent
  /// needs a gradient.
  Var record(Op op, std::vector<Var> parents, Tensor value, BackwardFn fn) {
    std::vector<std::size_t> ids;
    ids.reserve(parents.size());
    bool rg = false;
    for (const Var& p : parents) {
      if (p.graph() != this) throw std::logic_error("Var belongs to a different graph");
      ids.push_back(p.id());
      rg = rg || nodes_[p.id()].requires_grad;
    }
    return push(op, std::move(ids), std::move(value), rg ? std::move(fn) : nullptr, rg);
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient accumulator of a node, allocated as zeros on first use.
  Tensor& grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Seeds d(root)/d(root) = 1 and sweeps the tape backwards. root must be 1x1.
  void backward(Var root) {
    if (root.graph() != this) throw std::logic_error("backward on a foreign Var");
    if (nodes_[root.id()].value.size() != 1)
      throw DimensionError("backward requires a scalar root, got " + shape_str(nodes_[root.id()].value.shape()));
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad = Tensor(n.value.shape());
    if (!nodes_[root.id()].requires_grad) return;
    nodes_[root.id()].grad[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(*this, i);
    }
  }

 private:
  Var push(Op op, std::vector<std::size_t> parents, Tensor value, BackwardFn fn, bool rg) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.parents = std::move(parents);
    n.backward = std::move(fn);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return g_->value(id_); }
inline const Tensor& Var::grad() const { return g_->grad(id_); }

namespace detail {

inline Graph& same_graph(const Var& a, const Var& b) {
  if (a.graph() != b.graph() || a.graph() == nullptr) throw std::logic_error("operands from different graphs");
  return *a.graph();
}

// Rows of `small` each cover a contiguous block of `big` rows. Returns the block
// length, or 0 when the shapes are not compatible.
inline std::size_t broadcast_block(const Tensor& big, const Tensor& small) {
  if (big.cols() != small.cols() || small.rows() == 0) return 0;
  if (big.rows() % small.rows() != 0) return 0;
  return big.rows() / small.rows();
}

template <class Fwd, class Deriv>
Var unary(Var x, Op op, Fwd fwd, Deriv deriv) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  std::size_t xid = x.id();
  return g.record(op, {x}, std::move(out), [xid, deriv](Graph& gr, std::size_t self) {
    const Tensor& gout = gr.grad(self);
    const Tensor& xin = gr.value(xid);
    const Tensor& yout = gr.value(self);
    Tensor& gx = gr.grad_of(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i] * deriv(xin[i], yout[i]);
  });
}

inline double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/// Standard matrix product a[MxK] . b[KxN].
inline Var matmul(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.ptr() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double aip = av[i * k + p];
      const double* brow = bv.ptr() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  std::size_t aid = a.id(), bid = b.id();
  return g.record(Op::matmul, {a, b}, std::move(out), [aid, bid, m, k, n](Graph& gr, std::size_t self) {
    const Tensor& gout = gr.grad(self);
    if (gr.needs_grad(aid)) {
      const Tensor& bv2 = gr.value(bid);
      Tensor& ga = gr.grad_of(aid);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = gout.ptr() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = bv2.ptr() + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + p] += s;
        }
      }
    }
    if (gr.needs_grad(bid)) {
      const Tensor& av2 = gr.value(aid);
      Tensor& gb = gr.grad_of(bid);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = gout.ptr() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          double aip = av2[i * k + p];
          double* gbrow = gb.ptr() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

namespace detail {

// Shared forward/backward for add and mul with document-axis broadcasting.
template <bool IsMul>
Var binary(Var a, Var b) {
  Graph& g = same_graph(a, b);
  bool swap = a.value().rows() < b.value().rows();
  Var big = swap ? b : a;
  Var small = swap ? a : b;
  const Tensor& bv = big.value();
  const Tensor& sv = small.value();
  std::size_t block = broadcast_block(bv, sv);
  if (block == 0)
    throw DimensionError(std::string(IsMul ? "mul" : "add") + ": shapes not broadcastable, " +
                         shape_str(a.value().shape()) + " vs " + shape_str(b.value().shape()));
  std::size_t cols = bv.cols();
  Tensor out(bv.shape());
  for (std::size_t r = 0; r < bv.rows(); ++r) {
    const double* x = bv.ptr() + r * cols;
    const double* s = sv.ptr() + (r / block) * cols;
    double* o = out.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] = IsMul ? x[c] * s[c] : x[c] + s[c];
  }
  std::size_t big_id = big.id(), small_id = small.id();
  return g.record(IsMul ? Op::mul : Op::add, {a, b}, std::move(out),
                  [big_id, small_id, block, cols](Graph& gr, std::size_t self) {
                    const Tensor& gout = gr.grad(self);
                    std::size_t rows = gout.rows();
                    if (gr.needs_grad(big_id)) {
                      Tensor& gbig = gr.grad_of(big_id);
                      const Tensor& sv2 = gr.value(small_id);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c)
                          gbig[r * cols + c] += IsMul ? gout[r * cols + c] * sv2[(r / block) * cols + c]
                                                      : gout[r * cols + c];
                    }
                    if (gr.needs_grad(small_id)) {
                      Tensor& gsmall = gr.grad_of(small_id);
                      const Tensor& bv2 = gr.value(big_id);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c)
                          gsmall[(r / block) * cols + c] +=
                              IsMul ? gout[r * cols + c] * bv2[r * cols + c] : gout[r * cols + c];
                    }
                  });
}

}  // namespace detail

/// Elementwise sum. Either operand may have fewer rows as long as its row
/// count divides the other's: row i of the smaller one is added to the i-th
/// contiguous block (a 1xC operand broadcasts over every row).
inline Var add(Var a, Var b) { return detail::binary<false>(a, b); }

/// Elementwise product with the same broadcasting rule as add().
inline Var mul(Var a, Var b) { return detail::binary<true>(a, b); }

inline Var neg(Var x) {
  return detail::unary(x, Op::neg, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

/// relu'(0) is taken as 0.
inline Var relu(Var x) {
  return detail::unary(
      x, Op::relu, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var sigmoid(Var x) {
  return detail::unary(x, Op::sigmoid, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var log(Var x) {
  return detail::unary(x, Op::log, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var exp(Var x) {
  return detail::unary(x, Op::exp, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var scale(Var x, double k) {
  return detail::unary(x, Op::scale, [k](double v) { return k * v; }, [k](double, double) { return k; });
}

inline Var add_scalar(Var x, double k) {
  return detail::unary(x, Op::add_scalar, [k](double v) { return v + k; }, [](double, double) { return 1.0; });
}

/// 1/sqrt(x); x must be positive.
inline Var rsqrt(Var x) {
  return detail::unary(
      x, Op::rsqrt, [](double v) { return 1.0 / std::sqrt(v); }, [](double, double y) { return -0.5 * y * y * y; });
}

inline Var sub(Var a, Var b) { return add(a, neg(b)); }

/// Sum of all entries, as a 1x1 tensor.
inline Var sum(Var x) {
  Graph& g = *x.graph();
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  std::size_t xid = x.id();
  return g.record(Op::sum, {x}, Tensor::scalar(s), [xid](Graph& gr, std::size_t self) {
    double go = gr.grad(self)[0];
    Tensor& gx = gr.grad_of(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
  });
}

/// Per-channel pooling over the document axis.
///
/// x is N x C; mask has N entries. With segment_rows == 0 the whole input is
/// one segment and the result is 1 x C; otherwise N must be a multiple of
/// segment_rows and each consecutive block of segment_rows rows is pooled into
/// one output row. Masked-out rows are ignored. Mean backward spreads g/n_valid
/// over the valid rows; max backward routes g to the first argmax row.
inline Var reduce(Reduce kind, Var x, const Mask& mask, std::size_t segment_rows = 0) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  std::size_t n = xv.rows(), c = xv.cols();
  if (mask.size() != n)
    throw DimensionError("reduce: mask has " + std::to_string(mask.size()) + " entries for " + shape_str(xv.shape()));
  std::size_t seg = segment_rows == 0 ? n : segment_rows;
  if (seg == 0 || n % seg != 0)
    throw DimensionError("reduce: " + std::to_string(n) + " rows do not split into segments of " + std::to_string(seg));
  std::size_t nseg = n / seg;
  Tensor out = Tensor::zeros(nseg, c);
  std::vector<double> valid(nseg, 0.0);
  // argmax row per (segment, channel); only used for max
  std::vector<std::size_t> arg(kind == Reduce::max ? nseg * c : 0);
  for (std::size_t s = 0; s < nseg; ++s) {
    double* o = out.ptr() + s * c;
    if (kind == Reduce::max) std::fill(o, o + c, -std::numeric_limits<double>::infinity());
    for (std::size_t r = s * seg; r < (s + 1) * seg; ++r) {
      if (!mask[r]) continue;
      valid[s] += 1.0;
      const double* xr = xv.ptr() + r * c;
      for (std::size_t j = 0; j < c; ++j) {
        if (kind == Reduce::mean) {
          o[j] += xr[j];
        } else if (xr[j] > o[j]) {
          o[j] = xr[j];
          arg[s * c + j] = r;
        }
      }
    }
    if (valid[s] == 0.0) throw InvalidQueryError("reduce: segment " + std::to_string(s) + " has an empty mask");
    if (kind == Reduce::mean)
      for (std::size_t j = 0; j < c; ++j) o[j] /= valid[s];
  }
  std::size_t xid = x.id();
  if (kind == Reduce::mean) {
    return g.record(Op::reduce_mean, {x}, std::move(out),
                    [xid, mask, seg, c, valid = std::move(valid)](Graph& gr, std::size_t self) {
                      const Tensor& gout = gr.grad(self);
                      Tensor& gx = gr.grad_of(xid);
                      for (std::size_t r = 0; r < gx.rows(); ++r) {
                        if (!mask[r]) continue;
                        std::size_t s = r / seg;
                        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += gout[s * c + j] / valid[s];
                      }
                    });
  }
  return g.record(Op::reduce_max, {x}, std::move(out), [xid, c, arg = std::move(arg)](Graph& gr, std::size_t self) {
    const Tensor& gout = gr.grad(self);
    Tensor& gx = gr.grad_of(xid);
    for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i] * c + i % c] += gout[i];
  });
}

/// [a | b] along the channel axis.
inline Var concat_cols(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows())
    throw DimensionError("concat_cols: row counts differ, " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  std::size_t r = av.rows(), ca = av.cols(), cb = bv.cols();
  Tensor out = Tensor::zeros(r, ca + cb);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(av.ptr() + i * ca, ca, out.ptr() + i * (ca + cb));
    std::copy_n(bv.ptr() + i * cb, cb, out.ptr() + i * (ca + cb) + ca);
  }
  std::size_t aid = a.id(), bid = b.id();
  return g.record(Op::concat_cols, {a, b}, std::move(out), [aid, bid, r, ca, cb](Graph& gr, std::size_t self) {
    const Tensor& gout = gr.grad(self);
    if (gr.needs_grad(aid)) {
      Tensor& ga = gr.grad_of(aid);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += gout[i * (ca + cb) + j];
    }
    if (gr.needs_grad(bid)) {
      Tensor& gb = gr.grad_of(bid);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += gout[i * (ca + cb) + ca + j];
    }
  });
}

/// Columns [start, start + count).
inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  if (start + count > xv.cols())
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + shape_str(xv.shape()));
  std::size_t r = xv.rows(), c = xv.cols();
  Tensor out = Tensor::zeros(r, count);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(xv.ptr() + i * c + start, count, out.ptr() + i * count);
  std::size_t xid = x.id();
  return g.record(Op::slice_cols, {x}, std::move(out), [xid, r, c, start, count](Graph& gr, std::size_t self) {
    const Tensor& gout = gr.grad(self);
    Tensor& gx = gr.grad_of(xid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * c + start + j] += gout[i * count + j];
  });
}

/// Row i of the result is row index[i] of x; a negative index yields a zero row.
inline Var gather_rows(Var x, std::vector<long> index) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  std::size_t c = xv.cols();
  Tensor out = Tensor::zeros(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) continue;
    if (static_cast<std::size_t>(index[i]) >= xv.rows())
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " outside " + shape_str(xv.shape()));
    std::copy_n(xv.ptr() + index[i] * c, c, out.ptr() + i * c);
  }
  std::size_t xid = x.id();
  return g.record(Op::gather_rows, {x}, std::move(out), [xid, c, index = std::move(index)](Graph& gr, std::size_t self) {
    const Tensor& gout = gr.grad(self);
    Tensor& gx = gr.grad_of(xid);
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] < 0) continue;
      for (std::size_t j = 0; j < c; ++j) gx[index[i] * c + j] += gout[i * c + j];
    }
  });
}

/// Same row-major data viewed as rows x cols.
inline Var reshape(Var x, std::size_t rows, std::size_t cols) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  if (rows * cols != xv.size())
    throw DimensionError("reshape: " + shape_str(xv.shape()) + " cannot be viewed as " + shape_str({rows, cols}));
  std::size_t xid = x.id();
  return g.record(Op::reshape, {x}, Tensor({rows, cols}, xv.data()), [xid](Graph& gr, std::size_t self) {
    const Tensor& gout = gr.grad(self);
    Tensor& gx = gr.grad_of(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
  });
}

/// Each row of x repeated `times` times consecutively.
inline Var repeat_rows(Var x, std::size_t times) {
  Graph& g = *x.graph();
  const Tensor& xv = x.value();
  std::size_t r = xv.rows(), c = xv.cols();
  Tensor out = Tensor::zeros(r * times, c);
  for (std::size_t i = 0; i < r * times; ++i) std::copy_n(xv.ptr() + (i / times) * c, c, out.ptr() + i * c);
  std::size_t xid = x.id();
  return g.record(Op::repeat_rows, {x}, std::move(out), [xid, times, c](Graph& gr, std::size_t self) {
    const Tensor& gout = gr.grad(self);
    Tensor& gx = gr.grad_of(xid);
    for (std::size_t i = 0; i < gout.rows(); ++i)
      for (std::size_t j = 0; j < c; ++j) gx[(i / times) * c + j] += gout[i * c + j];
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckFailure {
  std::size_t leaf;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradCheckFailure> failures;
  bool ok() const { return failures.empty(); }
};

using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

/// Relative error used by grad_check: |a - n| / max(|a|, |n|, abs_floor).
inline double relative_error(double analytic, double numeric, double abs_floor) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h for
/// every coordinate of every leaf. f must return a 1x1 Var built from the
/// leaves it is handed.
inline GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> leaves, double h = 1e-5, double tol = 1e-4,
                                  double abs_floor = 1e-3) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor>* grads) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(leaves.size());
    for (const Tensor& t : leaves) vars.push_back(g.parameter(t));
    Var out = f(g, vars);
    if (out.value().size() != 1) throw DimensionError("grad_check: function is not scalar-valued");
    if (with_grad) {
      g.backward(out);
      for (const Var& v : vars) grads->push_back(v.grad());
    }
    return out.value()[0];
  };

  std::vector<Tensor> analytic;
  evaluate(true, &analytic);
  GradCheckReport report;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      double orig = leaves[l][i];
      leaves[l][i] = orig + h;
      double fp = evaluate(false, nullptr);
      leaves[l][i] = orig - h;
      double fm = evaluate(false, nullptr);
      leaves[l][i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[l].size() ? analytic[l][i] : 0.0;
      double err = relative_error(a, numeric, abs_floor);
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.checked;
      if (!(err <= tol)) report.failures.push_back({l, i, a, numeric, err});
    }
  }
  return report;
}

}  // namespace ad
}  // namespace serank
