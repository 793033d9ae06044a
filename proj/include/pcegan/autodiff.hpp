#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "pcegan/tensor.hpp"

namespace pcegan {

// Reverse-mode autodiff over a tape of primitive tensor ops.
//
// Backward passes emit new tape nodes instead of raw buffers, so the gradient
// of a gradient is well defined. The WGAN-GP discriminator loss needs this:
// its penalty term contains ||grad_x D(x)||, which is itself differentiated
// with respect to the critic parameters during training.
//
// Every primitive's vjp is expressed in terms of the same primitive set;
// data-dependent selections (argmax, relu masks, knn indices) are treated as
// constants of the linearization, as usual.

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op {
  leaf,
  add,
  sub,
  neg,
  mul,      // elementwise
  scale,    // * c0
  addc,     // + c0
  powc,     // x^c0 (x > 0 expected)
  sqrt_op,  // sqrt(x), derivative guarded at 0
  maxc,     // max(x, c0)
  leaky,    // leaky relu, slope c0
  matmul,   // op(a)*op(b), transpose flags
  colsum,   // RxC -> 1xC
  rowrep,   // 1xC -> RxC
  rowsum,   // RxC -> Rx1
  colrep,   // Rx1 -> RxC
  groupsum, // (n*k)xC -> nxC, sum over blocks of k rows
  grouprep, // nxC -> (n*k)xC, repeat each row k times
  gather,   // rows by index
  scatter,  // rows accumulated at index, into R rows
  softmaxg, // softmax over each k-row block, per column
  maxpoolg, // max over each k-row block, per column
  maxscat,  // place nxC rows at saved argmax positions of a (n*k)xC layout
  maxgath,  // pick (n*k)xC entries at saved argmax positions -> nxC
  concatc,  // columns of a then b
  slicec,   // columns [i0, i1)
  sumall,   // RxC -> 1x1
  bcastall, // 1x1 -> RxC
};

template <typename T>
class Tape {
 public:
  struct Node {
    Op op = Op::leaf;
    int a = -1, b = -1;
    T c0 = 0;
    int i0 = 0, i1 = 0;  // group size / slice bounds / target rows
    bool ta = false, tb = false;
    std::shared_ptr<const std::vector<int>> idx;  // gather/scatter/argmax
    Tensor<T> val;
  };

  const Tensor<T>& value(Var x) const { return node(x).val; }
  int rows(Var x) const { return node(x).val.rows; }
  int cols(Var x) const { return node(x).val.cols; }
  size_t num_nodes() const { return nodes_.size(); }

  Var constant(Tensor<T> t) {
    Node n;
    n.op = Op::leaf;
    n.val = std::move(t);
    return push(std::move(n));
  }

  Var scalar(T v) { return constant(Tensor<T>::scalar(v)); }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Node n = binary(Op::add, a, b, node(a).val.rows, node(a).val.cols);
    for (size_t i = 0; i < n.val.size(); ++i)
      n.val.v[i] = node(a).val.v[i] + node(b).val.v[i];
    return push(std::move(n));
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Node n = binary(Op::sub, a, b, node(a).val.rows, node(a).val.cols);
    for (size_t i = 0; i < n.val.size(); ++i)
      n.val.v[i] = node(a).val.v[i] - node(b).val.v[i];
    return push(std::move(n));
  }

  Var neg(Var a) {
    Node n = unary(Op::neg, a, node(a).val.rows, node(a).val.cols);
    for (size_t i = 0; i < n.val.size(); ++i) n.val.v[i] = -node(a).val.v[i];
    return push(std::move(n));
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Node n = binary(Op::mul, a, b, node(a).val.rows, node(a).val.cols);
    for (size_t i = 0; i < n.val.size(); ++i)
      n.val.v[i] = node(a).val.v[i] * node(b).val.v[i];
    return push(std::move(n));
  }

  Var scale(Var a, T c) {
    Node n = unary(Op::scale, a, node(a).val.rows, node(a).val.cols);
    n.c0 = c;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.v[i] = c * node(a).val.v[i];
    return push(std::move(n));
  }

  Var addc(Var a, T c) {
    Node n = unary(Op::addc, a, node(a).val.rows, node(a).val.cols);
    n.c0 = c;
    for (size_t i = 0; i < n.val.size(); ++i) n.val.v[i] = node(a).val.v[i] + c;
    return push(std::move(n));
  }

  Var powc(Var a, T p) {
    Node n = unary(Op::powc, a, node(a).val.rows, node(a).val.cols);
    n.c0 = p;
    for (size_t i = 0; i < n.val.size(); ++i)
      n.val.v[i] = std::pow(node(a).val.v[i], p);
    return push(std::move(n));
  }

  Var sqrt(Var a) {
    Node n = unary(Op::sqrt_op, a, node(a).val.rows, node(a).val.cols);
    for (size_t i = 0; i < n.val.size(); ++i)
      n.val.v[i] = std::sqrt(node(a).val.v[i]);
    return push(std::move(n));
  }

  Var maxc(Var a, T c) {
    Node n = unary(Op::maxc, a, node(a).val.rows, node(a).val.cols);
    n.c0 = c;
    for (size_t i = 0; i < n.val.size(); ++i)
      n.val.v[i] = std::max(node(a).val.v[i], c);
    return push(std::move(n));
  }

  Var leaky_relu(Var a, T slope) {
    Node n = unary(Op::leaky, a, node(a).val.rows, node(a).val.cols);
    n.c0 = slope;
    for (size_t i = 0; i < n.val.size(); ++i) {
      T x = node(a).val.v[i];
      n.val.v[i] = x > T(0) ? x : slope * x;
    }
    return push(std::move(n));
  }

  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const auto& A = node(a).val;
    const auto& B = node(b).val;
    int ar = ta ? A.cols : A.rows, ac = ta ? A.rows : A.cols;
    int br = tb ? B.cols : B.rows, bc = tb ? B.rows : B.cols;
    if (ac != br) throw std::invalid_argument("matmul: inner dim mismatch");
    Node n = binary(Op::matmul, a, b, ar, bc);
    n.ta = ta;
    n.tb = tb;
    using M = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const M> ma(A.v.data(), A.rows, A.cols);
    Eigen::Map<const M> mb(B.v.data(), B.rows, B.cols);
    Eigen::Map<M> mo(n.val.v.data(), ar, bc);
    if (!ta && !tb) mo.noalias() = ma * mb;
    else if (ta && !tb) mo.noalias() = ma.transpose() * mb;
    else if (!ta && tb) mo.noalias() = ma * mb.transpose();
    else mo.noalias() = ma.transpose() * mb.transpose();
    return push(std::move(n));
  }

  Var colsum(Var a) {
    const auto& A = node(a).val;
    Node n = unary(Op::colsum, a, 1, A.cols);
    for (int r = 0; r < A.rows; ++r)
      for (int c = 0; c < A.cols; ++c) n.val.at(0, c) += A.at(r, c);
    return push(std::move(n));
  }

  Var rowrep(Var a, int r) {
    const auto& A = node(a).val;
    if (A.rows != 1) throw std::invalid_argument("rowrep: expects 1xC");
    Node n = unary(Op::rowrep, a, r, A.cols);
    for (int i = 0; i < r; ++i)
      for (int c = 0; c < A.cols; ++c) n.val.at(i, c) = A.at(0, c);
    return push(std::move(n));
  }

  Var rowsum(Var a) {
    const auto& A = node(a).val;
    Node n = unary(Op::rowsum, a, A.rows, 1);
    for (int r = 0; r < A.rows; ++r)
      for (int c = 0; c < A.cols; ++c) n.val.at(r, 0) += A.at(r, c);
    return push(std::move(n));
  }

  Var colrep(Var a, int c) {
    const auto& A = node(a).val;
    if (A.cols != 1) throw std::invalid_argument("colrep: expects Rx1");
    Node n = unary(Op::colrep, a, A.rows, c);
    for (int r = 0; r < A.rows; ++r)
      for (int j = 0; j < c; ++j) n.val.at(r, j) = A.at(r, 0);
    return push(std::move(n));
  }

  Var groupsum(Var a, int k) {
    const auto& A = node(a).val;
    if (k <= 0 || A.rows % k != 0)
      throw std::invalid_argument("groupsum: rows not divisible by k");
    Node n = unary(Op::groupsum, a, A.rows / k, A.cols);
    n.i0 = k;
    for (int r = 0; r < A.rows; ++r)
      for (int c = 0; c < A.cols; ++c) n.val.at(r / k, c) += A.at(r, c);
    return push(std::move(n));
  }

  Var grouprep(Var a, int k) {
    const auto& A = node(a).val;
    Node n = unary(Op::grouprep, a, A.rows * k, A.cols);
    n.i0 = k;
    for (int r = 0; r < A.rows; ++r)
      for (int j = 0; j < k; ++j)
        for (int c = 0; c < A.cols; ++c) n.val.at(r * k + j, c) = A.at(r, c);
    return push(std::move(n));
  }

  Var gather_rows(Var a, std::shared_ptr<const std::vector<int>> idx) {
    const auto& A = node(a).val;
    Node n = unary(Op::gather, a, static_cast<int>(idx->size()), A.cols);
    n.idx = idx;
    for (size_t r = 0; r < idx->size(); ++r) {
      int s = (*idx)[r];
      if (s < 0 || s >= A.rows) throw std::invalid_argument("gather: index out of range");
      for (int c = 0; c < A.cols; ++c) n.val.at(static_cast<int>(r), c) = A.at(s, c);
    }
    return push(std::move(n));
  }

  Var gather_rows(Var a, const std::vector<int>& idx) {
    return gather_rows(a, std::make_shared<const std::vector<int>>(idx));
  }

  Var scatter_rows(Var a, std::shared_ptr<const std::vector<int>> idx, int rows_out) {
    const auto& A = node(a).val;
    if (static_cast<int>(idx->size()) != A.rows)
      throw std::invalid_argument("scatter: index count mismatch");
    Node n = unary(Op::scatter, a, rows_out, A.cols);
    n.idx = idx;
    n.i0 = rows_out;
    for (int r = 0; r < A.rows; ++r) {
      int d = (*idx)[r];
      if (d < 0 || d >= rows_out) throw std::invalid_argument("scatter: index out of range");
      for (int c = 0; c < A.cols; ++c) n.val.at(d, c) += A.at(r, c);
    }
    return push(std::move(n));
  }

  // Numerically stable softmax over each block of k consecutive rows, per column.
  Var softmax_groups(Var a, int k) {
    const auto& A = node(a).val;
    if (k <= 0 || A.rows % k != 0)
      throw std::invalid_argument("softmax_groups: rows not divisible by k");
    Node n = unary(Op::softmaxg, a, A.rows, A.cols);
    n.i0 = k;
    int ngroups = A.rows / k;
    for (int g = 0; g < ngroups; ++g)
      for (int c = 0; c < A.cols; ++c) {
        T m = A.at(g * k, c);
        for (int j = 1; j < k; ++j) m = std::max(m, A.at(g * k + j, c));
        T z = 0;
        for (int j = 0; j < k; ++j) {
          T e = std::exp(A.at(g * k + j, c) - m);
          n.val.at(g * k + j, c) = e;
          z += e;
        }
        for (int j = 0; j < k; ++j) n.val.at(g * k + j, c) /= z;
      }
    return push(std::move(n));
  }

  // Max over each block of k consecutive rows, per column. First max wins ties.
  Var maxpool_groups(Var a, int k) {
    const auto& A = node(a).val;
    if (k <= 0 || A.rows % k != 0)
      throw std::invalid_argument("maxpool_groups: rows not divisible by k");
    int ngroups = A.rows / k;
    Node n = unary(Op::maxpoolg, a, ngroups, A.cols);
    n.i0 = k;
    auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(ngroups) * A.cols);
    for (int g = 0; g < ngroups; ++g)
      for (int c = 0; c < A.cols; ++c) {
        int best = 0;
        T bv = A.at(g * k, c);
        for (int j = 1; j < k; ++j) {
          T x = A.at(g * k + j, c);
          if (x > bv) { bv = x; best = j; }
        }
        n.val.at(g, c) = bv;
        (*arg)[static_cast<size_t>(g) * A.cols + c] = best;
      }
    n.idx = arg;
    return push(std::move(n));
  }

  Var concat_cols(Var a, Var b) {
    const auto& A = node(a).val;
    const auto& B = node(b).val;
    if (A.rows != B.rows) throw std::invalid_argument("concat_cols: row mismatch");
    Node n = binary(Op::concatc, a, b, A.rows, A.cols + B.cols);
    for (int r = 0; r < A.rows; ++r) {
      for (int c = 0; c < A.cols; ++c) n.val.at(r, c) = A.at(r, c);
      for (int c = 0; c < B.cols; ++c) n.val.at(r, A.cols + c) = B.at(r, c);
    }
    return push(std::move(n));
  }

  Var slice_cols(Var a, int i0, int i1) {
    const auto& A = node(a).val;
    if (i0 < 0 || i1 > A.cols || i0 >= i1)
      throw std::invalid_argument("slice_cols: bad range");
    Node n = unary(Op::slicec, a, A.rows, i1 - i0);
    n.i0 = i0;
    n.i1 = i1;
    for (int r = 0; r < A.rows; ++r)
      for (int c = i0; c < i1; ++c) n.val.at(r, c - i0) = A.at(r, c);
    return push(std::move(n));
  }

  Var sum_all(Var a) {
    const auto& A = node(a).val;
    Node n = unary(Op::sumall, a, 1, 1);
    T s = 0;
    for (T x : A.v) s += x;
    n.val.at(0, 0) = s;
    return push(std::move(n));
  }

  Var broadcast_all(Var a, int r, int c) {
    const auto& A = node(a).val;
    if (A.rows != 1 || A.cols != 1)
      throw std::invalid_argument("broadcast_all: expects 1x1");
    Node n = unary(Op::bcastall, a, r, c);
    std::fill(n.val.v.begin(), n.val.v.end(), A.at(0, 0));
    return push(std::move(n));
  }

  // ---- composites -------------------------------------------------------

  Var mean_all(Var a) {
    const auto& A = node(a).val;
    return scale(sum_all(a), T(1) / static_cast<T>(A.rows * A.cols));
  }

  Var square(Var a) { return mul(a, a); }

  // X (RxCin) * W (CinxCout) + bias (1xCout)
  Var linear(Var x, Var w, Var bias) {
    return add(matmul(x, w), rowrep(bias, rows(x)));
  }

  // Normalize over the row (point/edge) axis with learnable gamma/beta (1xC).
  // Statistics always come from the current input, so inference is
  // deterministic and checkpoints carry no running moments.
  Var batchnorm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    int r = rows(x);
    Var mu = scale(colsum(x), T(1) / static_cast<T>(r));
    Var xc = sub(x, rowrep(mu, r));
    Var var = scale(colsum(square(xc)), T(1) / static_cast<T>(r));
    Var inv = powc(addc(var, eps), T(-0.5));
    Var y = mul(xc, rowrep(mul(inv, gamma), r));
    return add(y, rowrep(beta, r));
  }

  // ---- backward ---------------------------------------------------------

  // Gradients of scalar `root` with respect to each var in `wrt`.
  // Vars with no path to the root get a zero gradient of matching shape.
  std::vector<Var> gradients(Var root, const std::vector<Var>& wrt) {
    if (rows(root) != 1 || cols(root) != 1)
      throw std::invalid_argument("gradients: root must be scalar");
    const int n0 = static_cast<int>(nodes_.size());
    std::vector<Var> adj(n0, Var{});
    adj[root.id] = scalar(T(1));
    for (int i = root.id; i >= 0; --i) {
      if (!adj[i].valid()) continue;
      backprop_node(i, adj[i], adj);
    }
    std::vector<Var> out;
    out.reserve(wrt.size());
    for (Var w : wrt) {
      if (w.id < n0 && adj[w.id].valid()) out.push_back(adj[w.id]);
      else out.push_back(constant(Tensor<T>::zeros(rows(w), cols(w))));
    }
    return out;
  }

 private:
  std::vector<Node> nodes_;

  const Node& node(Var x) const { return nodes_.at(x.id); }
  Node& node(Var x) { return nodes_.at(x.id); }

  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Node unary(Op op, Var a, int r, int c) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.val = Tensor<T>(r, c);
    return n;
  }

  Node binary(Op op, Var a, Var b, int r, int c) {
    Node n = unary(op, a, r, c);
    n.b = b.id;
    return n;
  }

  void check_same(Var a, Var b, const char* what) {
    if (!node(a).val.same_shape(node(b).val))
      throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }

  void accumulate(std::vector<Var>& adj, int target, Var g) {
    if (target < 0 || target >= static_cast<int>(adj.size())) return;
    if (!adj[target].valid()) adj[target] = g;
    else adj[target] = add(adj[target], g);
  }

  Var mask_leaf(const Tensor<T>& x, T slope) {
    Tensor<T> m(x.rows, x.cols);
    for (size_t i = 0; i < x.size(); ++i) m.v[i] = x.v[i] > T(0) ? T(1) : slope;
    return constant(std::move(m));
  }

  Var max_scatter(Var a, std::shared_ptr<const std::vector<int>> arg, int k) {
    const auto& A = node(a).val;
    Node n = unary(Op::maxscat, a, A.rows * k, A.cols);
    n.i0 = k;
    n.idx = arg;
    for (int g = 0; g < A.rows; ++g)
      for (int c = 0; c < A.cols; ++c)
        n.val.at(g * k + (*arg)[static_cast<size_t>(g) * A.cols + c], c) = A.at(g, c);
    return push(std::move(n));
  }

  Var max_gather(Var a, std::shared_ptr<const std::vector<int>> arg, int k) {
    const auto& A = node(a).val;
    int ngroups = A.rows / k;
    Node n = unary(Op::maxgath, a, ngroups, A.cols);
    n.i0 = k;
    n.idx = arg;
    for (int g = 0; g < ngroups; ++g)
      for (int c = 0; c < A.cols; ++c)
        n.val.at(g, c) = A.at(g * k + (*arg)[static_cast<size_t>(g) * A.cols + c], c);
    return push(std::move(n));
  }

  void backprop_node(int i, Var g, std::vector<Var>& adj) {
    // Copy the POD fields we need: pushing new nodes may reallocate nodes_.
    Op op = nodes_[i].op;
    int a = nodes_[i].a, b = nodes_[i].b;
    T c0 = nodes_[i].c0;
    int i0 = nodes_[i].i0, i1 = nodes_[i].i1;
    bool ta = nodes_[i].ta, tb = nodes_[i].tb;
    auto idx = nodes_[i].idx;
    Var self{i};
    switch (op) {
      case Op::leaf:
        break;
      case Op::add:
        accumulate(adj, a, g);
        accumulate(adj, b, g);
        break;
      case Op::sub:
        accumulate(adj, a, g);
        accumulate(adj, b, neg(g));
        break;
      case Op::neg:
        accumulate(adj, a, neg(g));
        break;
      case Op::mul:
        accumulate(adj, a, mul(g, Var{b}));
        accumulate(adj, b, mul(g, Var{a}));
        break;
      case Op::scale:
        accumulate(adj, a, scale(g, c0));
        break;
      case Op::addc:
        accumulate(adj, a, g);
        break;
      case Op::powc:
        accumulate(adj, a, mul(g, scale(powc(Var{a}, c0 - T(1)), c0)));
        break;
      case Op::sqrt_op:
        // d sqrt(x) = 1/(2 sqrt(x)); clamp the argument away from zero so the
        // derivative graph stays finite where the forward value is 0.
        accumulate(adj, a,
                   mul(g, scale(powc(maxc(Var{a}, T(1e-30)), T(-0.5)), T(0.5))));
        break;
      case Op::maxc: {
        Tensor<T> m(nodes_[a].val.rows, nodes_[a].val.cols);
        for (size_t j = 0; j < m.size(); ++j)
          m.v[j] = nodes_[a].val.v[j] >= c0 ? T(1) : T(0);
        accumulate(adj, a, mul(g, constant(std::move(m))));
        break;
      }
      case Op::leaky:
        accumulate(adj, a, mul(g, mask_leaf(nodes_[a].val, c0)));
        break;
      case Op::matmul: {
        Var A{a}, B{b};
        Var da = ta ? matmul(B, g, tb, true) : matmul(g, B, false, !tb);
        Var db = tb ? matmul(g, A, true, ta) : matmul(A, g, !ta, false);
        accumulate(adj, a, da);
        accumulate(adj, b, db);
        break;
      }
      case Op::colsum:
        accumulate(adj, a, rowrep(g, nodes_[a].val.rows));
        break;
      case Op::rowrep:
        accumulate(adj, a, colsum(g));
        break;
      case Op::rowsum:
        accumulate(adj, a, colrep(g, nodes_[a].val.cols));
        break;
      case Op::colrep:
        accumulate(adj, a, rowsum(g));
        break;
      case Op::groupsum:
        accumulate(adj, a, grouprep(g, i0));
        break;
      case Op::grouprep:
        accumulate(adj, a, groupsum(g, i0));
        break;
      case Op::gather:
        accumulate(adj, a, scatter_rows(g, idx, nodes_[a].val.rows));
        break;
      case Op::scatter:
        accumulate(adj, a, gather_rows(g, idx));
        break;
      case Op::softmaxg: {
        Var gy = mul(g, self);
        Var s = groupsum(gy, i0);
        accumulate(adj, a, sub(gy, mul(self, grouprep(s, i0))));
        break;
      }
      case Op::maxpoolg:
        accumulate(adj, a, max_scatter(g, idx, i0));
        break;
      case Op::maxscat:
        accumulate(adj, a, max_gather(g, idx, i0));
        break;
      case Op::maxgath:
        accumulate(adj, a, max_scatter(g, idx, i0));
        break;
      case Op::concatc: {
        int ca = nodes_[a].val.cols;
        int cb = nodes_[b].val.cols;
        accumulate(adj, a, slice_cols(g, 0, ca));
        accumulate(adj, b, slice_cols(g, ca, ca + cb));
        break;
      }
      case Op::slicec: {
        const int ar = nodes_[a].val.rows;
        const int ac = nodes_[a].val.cols;
        Var d = g;
        if (i0 > 0) d = concat_cols(constant(Tensor<T>::zeros(ar, i0)), d);
        if (i1 < ac) d = concat_cols(d, constant(Tensor<T>::zeros(ar, ac - i1)));
        accumulate(adj, a, d);
        break;
      }
      case Op::sumall:
        accumulate(adj, a, broadcast_all(g, nodes_[a].val.rows, nodes_[a].val.cols));
        break;
      case Op::bcastall:
        accumulate(adj, a, sum_all(g));
        break;
    }
  }
};

}  // namespace pcegan
