#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "mtsc/graph.hpp"

namespace mtsc::ad {

// ---------------------------------------------------------------------------
// Dense kernels
// ---------------------------------------------------------------------------

/// C (M×N) += alpha * op(A) · op(B). Row-major contiguous. Only the transpose
/// combinations the graph ops need are implemented.
template <typename T>
void matmul_acc(const T* A, const T* B, T* C, size_t M, size_t K, size_t N,
                bool ta, bool tb, T alpha = T(1)) {
  if (!ta && !tb) {  // A: M×K, B: K×N
    for (size_t m = 0; m < M; ++m) {
      T* crow = C + m * N;
      const T* arow = A + m * K;
      for (size_t k = 0; k < K; ++k) {
        T a = alpha * arow[k];
        if (a == T(0)) continue;
        const T* brow = B + k * N;
        for (size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
      }
    }
  } else if (!ta && tb) {  // A: M×K, B: N×K
    for (size_t m = 0; m < M; ++m) {
      const T* arow = A + m * K;
      T* crow = C + m * N;
      for (size_t n = 0; n < N; ++n) {
        const T* brow = B + n * K;
        T acc = T(0);
        for (size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
        crow[n] += alpha * acc;
      }
    }
  } else if (ta && !tb) {  // A: K×M, B: K×N
    for (size_t k = 0; k < K; ++k) {
      const T* arow = A + k * M;
      const T* brow = B + k * N;
      for (size_t m = 0; m < M; ++m) {
        T a = alpha * arow[m];
        if (a == T(0)) continue;
        T* crow = C + m * N;
        for (size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
      }
    }
  } else {
    check(false, "matmul_acc: transposed/transposed is not supported");
  }
}

inline std::pair<size_t, size_t> conv_geometry(size_t len, size_t kernel, size_t stride) {
  size_t out = (len + stride - 1) / stride;
  long total = long((out - 1) * stride + kernel) - long(len);
  if (total < 0) total = 0;
  return {out, size_t(total) / 2};  // {output length, left pad}
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Bwd>
Tensor<T> elementwise_unary(Graph<T>& g, Tensor<T> x, Fwd fwd, Bwd bwd) {
  Node<T>* xn = x.node();
  Tensor<T> y = g.make(xn->shape, {xn}, [xn, bwd](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < node.value.size(); ++i)
      xn->grad[i] += node.grad[i] * bwd(xn->value[i], node.value[i]);
  });
  Node<T>* yn = y.node();
  for (size_t i = 0; i < xn->value.size(); ++i) yn->value[i] = fwd(xn->value[i]);
  return y;
}

template <typename T>
Tensor<T> relu(Graph<T>& g, Tensor<T> x) {
  return elementwise_unary(
      g, x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, Tensor<T> x) {
  return elementwise_unary(
      g, x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(Graph<T>& g, Tensor<T> x) {
  return elementwise_unary(
      g, x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(Graph<T>& g, Tensor<T> x) {
  return elementwise_unary(
      g, x, [](T v) { return std::exp(v); },
      [](T, T y) { return y; });
}

/// alpha * x + beta, elementwise with scalar constants.
template <typename T>
Tensor<T> affine(Graph<T>& g, Tensor<T> x, T alpha, T beta) {
  return elementwise_unary(
      g, x, [alpha, beta](T v) { return alpha * v + beta; },
      [alpha](T, T) { return alpha; });
}

template <typename T>
Tensor<T> scale(Graph<T>& g, Tensor<T> x, T alpha) {
  return affine(g, x, alpha, T(0));
}

template <typename T, typename Fwd>
Tensor<T> elementwise_binary(Graph<T>& g, Tensor<T> a, Tensor<T> b, Fwd fwd,
                             std::function<void(Node<T>&, Node<T>*, Node<T>*)> bwd,
                             const char* name) {
  check(a.shape() == b.shape(), name, ": shape mismatch ", shape_str(a.shape()), " vs ",
        shape_str(b.shape()));
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  Tensor<T> y = g.make(an->shape, {an, bn},
                       [an, bn, bwd](Node<T>& node) { bwd(node, an, bn); });
  Node<T>* yn = y.node();
  for (size_t i = 0; i < an->value.size(); ++i) yn->value[i] = fwd(an->value[i], bn->value[i]);
  return y;
}

template <typename T>
Tensor<T> add(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  return elementwise_binary<T>(
      g, a, b, [](T x, T y) { return x + y; },
      [](Node<T>& node, Node<T>* an, Node<T>* bn) {
        if (an->requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i];
        if (bn->requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) bn->grad[i] += node.grad[i];
      },
      "add");
}

template <typename T>
Tensor<T> sub(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  return elementwise_binary<T>(
      g, a, b, [](T x, T y) { return x - y; },
      [](Node<T>& node, Node<T>* an, Node<T>* bn) {
        if (an->requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i];
        if (bn->requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) bn->grad[i] -= node.grad[i];
      },
      "sub");
}

template <typename T>
Tensor<T> mul(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  return elementwise_binary<T>(
      g, a, b, [](T x, T y) { return x * y; },
      [](Node<T>& node, Node<T>* an, Node<T>* bn) {
        if (an->requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i] * bn->value[i];
        if (bn->requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) bn->grad[i] += node.grad[i] * an->value[i];
      },
      "mul");
}

/// a + alpha * b (same shape). Used to combine loss terms.
template <typename T>
Tensor<T> add_scaled(Graph<T>& g, Tensor<T> a, Tensor<T> b, T alpha) {
  return elementwise_binary<T>(
      g, a, b, [alpha](T x, T y) { return x + alpha * y; },
      [alpha](Node<T>& node, Node<T>* an, Node<T>* bn) {
        if (an->requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) an->grad[i] += node.grad[i];
        if (bn->requires_grad)
          for (size_t i = 0; i < node.grad.size(); ++i) bn->grad[i] += alpha * node.grad[i];
      },
      "add_scaled");
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Graph<T>& g, Tensor<T> x, Shape shape) {
  check(numel(shape) == x.size(), "reshape: ", shape_str(x.shape()), " -> ", shape_str(shape));
  Node<T>* xn = x.node();
  Tensor<T> y = g.make(std::move(shape), {xn}, [xn](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < node.grad.size(); ++i) xn->grad[i] += node.grad[i];
  });
  std::copy(xn->value.begin(), xn->value.end(), y.node()->value.begin());
  return y;
}

/// x: B×T×C, returns rows [t0, t0+len) as B×len×C.
template <typename T>
Tensor<T> slice_time(Graph<T>& g, Tensor<T> x, size_t t0, size_t len) {
  check(x.shape().size() == 3, "slice_time: expected rank 3, got ", shape_str(x.shape()));
  size_t B = x.shape()[0], Tn = x.shape()[1], C = x.shape()[2];
  check(t0 + len <= Tn, "slice_time: range [", t0, ",", t0 + len, ") exceeds T=", Tn);
  Node<T>* xn = x.node();
  Tensor<T> y = g.make({B, len, C}, {xn}, [xn, t0, len, B, Tn, C](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t b = 0; b < B; ++b)
      for (size_t t = 0; t < len; ++t)
        for (size_t c = 0; c < C; ++c)
          xn->grad[(b * Tn + t0 + t) * C + c] += node.grad[(b * len + t) * C + c];
  });
  Node<T>* yn = y.node();
  for (size_t b = 0; b < B; ++b)
    std::copy(xn->value.begin() + (b * Tn + t0) * C, xn->value.begin() + (b * Tn + t0 + len) * C,
              yn->value.begin() + b * len * C);
  return y;
}

/// x: B×T×C at timestep t -> B×C.
template <typename T>
Tensor<T> time_step(Graph<T>& g, Tensor<T> x, size_t t) {
  size_t B = x.shape()[0], Tn = x.shape()[1], C = x.shape()[2];
  Tensor<T> y = slice_time(g, x, t, 1);
  (void)B; (void)Tn;
  y.node()->shape = {x.shape()[0], C};
  return y;
}

/// steps: T tensors of shape B×C -> B×T×C.
template <typename T>
Tensor<T> stack_time(Graph<T>& g, const std::vector<Tensor<T>>& steps) {
  check(!steps.empty(), "stack_time: empty input");
  size_t B = steps[0].shape()[0], C = steps[0].shape()[1], Tn = steps.size();
  std::vector<Node<T>*> inputs;
  inputs.reserve(Tn);
  for (const auto& s : steps) {
    check(s.shape() == steps[0].shape(), "stack_time: inconsistent step shapes");
    inputs.push_back(s.node());
  }
  Tensor<T> y = g.make({B, Tn, C}, inputs, [B, Tn, C](Node<T>& node) {
    for (size_t t = 0; t < Tn; ++t) {
      Node<T>* in = node.inputs[t];
      if (!in->requires_grad) continue;
      for (size_t b = 0; b < B; ++b)
        for (size_t c = 0; c < C; ++c) in->grad[b * C + c] += node.grad[(b * Tn + t) * C + c];
    }
  });
  Node<T>* yn = y.node();
  for (size_t t = 0; t < Tn; ++t) {
    const auto& v = inputs[t]->value;
    for (size_t b = 0; b < B; ++b)
      std::copy(v.begin() + b * C, v.begin() + (b + 1) * C, yn->value.begin() + (b * Tn + t) * C);
  }
  return y;
}

/// B×D -> B×S×D, repeating each feature vector S times along a new time axis.
template <typename T>
Tensor<T> broadcast_time(Graph<T>& g, Tensor<T> x, size_t steps) {
  check(x.shape().size() == 2, "broadcast_time: expected rank 2");
  size_t B = x.shape()[0], D = x.shape()[1];
  Node<T>* xn = x.node();
  Tensor<T> y = g.make({B, steps, D}, {xn}, [xn, B, steps, D](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t b = 0; b < B; ++b)
      for (size_t s = 0; s < steps; ++s)
        for (size_t d = 0; d < D; ++d) xn->grad[b * D + d] += node.grad[(b * steps + s) * D + d];
  });
  Node<T>* yn = y.node();
  for (size_t b = 0; b < B; ++b)
    for (size_t s = 0; s < steps; ++s)
      std::copy(xn->value.begin() + b * D, xn->value.begin() + (b + 1) * D,
                yn->value.begin() + (b * steps + s) * D);
  return y;
}

template <typename T>
Tensor<T> reverse_time(Graph<T>& g, Tensor<T> x) {
  check(x.shape().size() == 3, "reverse_time: expected rank 3");
  size_t B = x.shape()[0], Tn = x.shape()[1], C = x.shape()[2];
  Node<T>* xn = x.node();
  Tensor<T> y = g.make(xn->shape, {xn}, [xn, B, Tn, C](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t b = 0; b < B; ++b)
      for (size_t t = 0; t < Tn; ++t)
        for (size_t c = 0; c < C; ++c)
          xn->grad[(b * Tn + Tn - 1 - t) * C + c] += node.grad[(b * Tn + t) * C + c];
  });
  Node<T>* yn = y.node();
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < Tn; ++t)
      std::copy(xn->value.begin() + (b * Tn + Tn - 1 - t) * C,
                xn->value.begin() + (b * Tn + Tn - t) * C,
                yn->value.begin() + (b * Tn + t) * C);
  return y;
}

/// Concatenate along the last axis; all leading dims must match.
template <typename T>
Tensor<T> concat_last(Graph<T>& g, Tensor<T> a, Tensor<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  check(sa.size() == sb.size() && sa.size() >= 1, "concat_last: rank mismatch");
  for (size_t i = 0; i + 1 < sa.size(); ++i)
    check(sa[i] == sb[i], "concat_last: leading dim mismatch");
  size_t X = sa.back(), Y = sb.back();
  size_t rows = numel(sa) / X;
  Shape out = sa;
  out.back() = X + Y;
  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  Tensor<T> y = g.make(out, {an, bn}, [an, bn, rows, X, Y](Node<T>& node) {
    for (size_t r = 0; r < rows; ++r) {
      if (an->requires_grad)
        for (size_t i = 0; i < X; ++i) an->grad[r * X + i] += node.grad[r * (X + Y) + i];
      if (bn->requires_grad)
        for (size_t i = 0; i < Y; ++i) bn->grad[r * Y + i] += node.grad[r * (X + Y) + X + i];
    }
  });
  Node<T>* yn = y.node();
  for (size_t r = 0; r < rows; ++r) {
    std::copy(an->value.begin() + r * X, an->value.begin() + (r + 1) * X,
              yn->value.begin() + r * (X + Y));
    std::copy(bn->value.begin() + r * Y, bn->value.begin() + (r + 1) * Y,
              yn->value.begin() + r * (X + Y) + X);
  }
  return y;
}

/// Slice of the last axis: ..×D -> ..×len starting at `off`.
template <typename T>
Tensor<T> slice_last(Graph<T>& g, Tensor<T> x, size_t off, size_t len) {
  const Shape& s = x.shape();
  size_t D = s.back();
  check(off + len <= D, "slice_last: range exceeds last dim");
  size_t rows = numel(s) / D;
  Shape out = s;
  out.back() = len;
  Node<T>* xn = x.node();
  Tensor<T> y = g.make(out, {xn}, [xn, rows, D, off, len](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t r = 0; r < rows; ++r)
      for (size_t i = 0; i < len; ++i) xn->grad[r * D + off + i] += node.grad[r * len + i];
  });
  Node<T>* yn = y.node();
  for (size_t r = 0; r < rows; ++r)
    std::copy(xn->value.begin() + r * D + off, xn->value.begin() + r * D + off + len,
              yn->value.begin() + r * len);
  return y;
}

/// x: B×S×D plus a constant S×D table broadcast over the batch.
template <typename T>
Tensor<T> add_rows(Graph<T>& g, Tensor<T> x, const std::vector<T>& rows) {
  check(x.shape().size() == 3, "add_rows: expected rank 3");
  size_t B = x.shape()[0], SD = x.shape()[1] * x.shape()[2];
  check(rows.size() == SD, "add_rows: table size mismatch");
  Node<T>* xn = x.node();
  Tensor<T> y = g.make(xn->shape, {xn}, [xn](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < node.grad.size(); ++i) xn->grad[i] += node.grad[i];
  });
  Node<T>* yn = y.node();
  for (size_t b = 0; b < B; ++b)
    for (size_t i = 0; i < SD; ++i) yn->value[b * SD + i] = xn->value[b * SD + i] + rows[i];
  return y;
}

/// B×S×(H·dh) -> (B·H)×S×dh, grouping each head's columns into its own batch.
template <typename T>
Tensor<T> split_heads(Graph<T>& g, Tensor<T> x, size_t heads) {
  check(x.shape().size() == 3, "split_heads: expected rank 3");
  size_t B = x.shape()[0], S = x.shape()[1], D = x.shape()[2];
  check(D % heads == 0, "split_heads: D=", D, " not divisible by heads=", heads);
  size_t dh = D / heads;
  Node<T>* xn = x.node();
  Tensor<T> y = g.make({B * heads, S, dh}, {xn}, [xn, B, S, D, heads, dh](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t b = 0; b < B; ++b)
      for (size_t h = 0; h < heads; ++h)
        for (size_t s = 0; s < S; ++s)
          for (size_t d = 0; d < dh; ++d)
            xn->grad[(b * S + s) * D + h * dh + d] +=
                node.grad[((b * heads + h) * S + s) * dh + d];
  });
  Node<T>* yn = y.node();
  for (size_t b = 0; b < B; ++b)
    for (size_t h = 0; h < heads; ++h)
      for (size_t s = 0; s < S; ++s)
        for (size_t d = 0; d < dh; ++d)
          yn->value[((b * heads + h) * S + s) * dh + d] = xn->value[(b * S + s) * D + h * dh + d];
  return y;
}

/// Inverse of split_heads: (B·H)×S×dh -> B×S×(H·dh).
template <typename T>
Tensor<T> merge_heads(Graph<T>& g, Tensor<T> x, size_t heads) {
  check(x.shape().size() == 3, "merge_heads: expected rank 3");
  size_t BH = x.shape()[0], S = x.shape()[1], dh = x.shape()[2];
  check(BH % heads == 0, "merge_heads: batch not divisible by heads");
  size_t B = BH / heads, D = heads * dh;
  Node<T>* xn = x.node();
  Tensor<T> y = g.make({B, S, D}, {xn}, [xn, B, S, D, heads, dh](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t b = 0; b < B; ++b)
      for (size_t h = 0; h < heads; ++h)
        for (size_t s = 0; s < S; ++s)
          for (size_t d = 0; d < dh; ++d)
            xn->grad[((b * heads + h) * S + s) * dh + d] +=
                node.grad[(b * S + s) * D + h * dh + d];
  });
  Node<T>* yn = y.node();
  for (size_t b = 0; b < B; ++b)
    for (size_t h = 0; h < heads; ++h)
      for (size_t s = 0; s < S; ++s)
        for (size_t d = 0; d < dh; ++d)
          yn->value[(b * S + s) * D + h * dh + d] = xn->value[((b * heads + h) * S + s) * dh + d];
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

/// x: N..×In, W: In×Out, optional bias Out. Leading dims are flattened.
template <typename T>
Tensor<T> linear(Graph<T>& g, Tensor<T> x, Tensor<T> w, Tensor<T> b = Tensor<T>()) {
  const Shape& xs = x.shape();
  check(w.shape().size() == 2, "linear: weight must be rank 2");
  size_t in = w.shape()[0], out = w.shape()[1];
  check(xs.back() == in, "linear: input dim ", xs.back(), " != weight rows ", in);
  if (b.defined()) check(b.shape() == Shape{out}, "linear: bias shape mismatch");
  size_t rows = numel(xs) / in;
  Shape ys = xs;
  ys.back() = out;

  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bn = b.defined() ? b.node() : nullptr;
  std::vector<Node<T>*> inputs = {xn, wn};
  if (bn) inputs.push_back(bn);

  Tensor<T> y = g.make(ys, inputs, [xn, wn, bn, rows, in, out](Node<T>& node) {
    if (xn->requires_grad)
      matmul_acc(node.grad.data(), wn->value.data(), xn->grad.data(), rows, out, in, false, true);
    if (wn->requires_grad)
      matmul_acc(xn->value.data(), node.grad.data(), wn->grad.data(), in, rows, out, true, false);
    if (bn && bn->requires_grad)
      for (size_t r = 0; r < rows; ++r)
        for (size_t o = 0; o < out; ++o) bn->grad[o] += node.grad[r * out + o];
  });
  Node<T>* yn = y.node();
  if (bn)
    for (size_t r = 0; r < rows; ++r)
      std::copy(bn->value.begin(), bn->value.end(), yn->value.begin() + r * out);
  matmul_acc(xn->value.data(), wn->value.data(), yn->value.data(), rows, in, out, false, false);
  return y;
}

/// Batched matmul: a: N×R×K (N×K×R when tb on b analogously), out = alpha·a·op(b).
/// Supported: (false,false) a N×R×K · b N×K×C, and (false,true) a N×R×K · b N×C×K.
template <typename T>
Tensor<T> bmm(Graph<T>& g, Tensor<T> a, Tensor<T> b, bool tb, T alpha = T(1)) {
  check(a.shape().size() == 3 && b.shape().size() == 3, "bmm: expected rank 3");
  size_t N = a.shape()[0], R = a.shape()[1], K = a.shape()[2];
  check(b.shape()[0] == N, "bmm: batch mismatch");
  size_t C = tb ? b.shape()[1] : b.shape()[2];
  check((tb ? b.shape()[2] : b.shape()[1]) == K, "bmm: inner dim mismatch");

  Node<T>* an = a.node();
  Node<T>* bn = b.node();
  Tensor<T> y = g.make({N, R, C}, {an, bn}, [an, bn, N, R, K, C, tb, alpha](Node<T>& node) {
    for (size_t n = 0; n < N; ++n) {
      const T* ga = node.grad.data() + n * R * C;
      const T* av = an->value.data() + n * R * K;
      const T* bv = bn->value.data() + n * (tb ? C * K : K * C);
      if (!tb) {
        // y = α a·b : ga_a = α g·bᵀ, ga_b = α aᵀ·g
        if (an->requires_grad)
          matmul_acc(ga, bv, an->grad.data() + n * R * K, R, C, K, false, true, alpha);
        if (bn->requires_grad)
          matmul_acc(av, ga, bn->grad.data() + n * K * C, K, R, C, true, false, alpha);
      } else {
        // y = α a·bᵀ : ga_a = α g·b, ga_b = α gᵀ·a
        if (an->requires_grad)
          matmul_acc(ga, bv, an->grad.data() + n * R * K, R, C, K, false, false, alpha);
        if (bn->requires_grad)
          matmul_acc(ga, av, bn->grad.data() + n * C * K, C, R, K, true, false, alpha);
      }
    }
  });
  Node<T>* yn = y.node();
  for (size_t n = 0; n < N; ++n)
    matmul_acc(an->value.data() + n * R * K, bn->value.data() + n * (tb ? C * K : K * C),
               yn->value.data() + n * R * C, R, K, C, false, tb, alpha);
  return y;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// x: B×T×Cin, w: K×Cin×Cout, optional bias Cout, stride s.
/// Cross-correlation with symmetric zero padding; output length ceil(T/s).
template <typename T>
Tensor<T> conv1d(Graph<T>& g, Tensor<T> x, Tensor<T> w, Tensor<T> b, size_t stride) {
  check(x.shape().size() == 3, "conv1d: input must be rank 3, got ", shape_str(x.shape()));
  check(w.shape().size() == 3, "conv1d: weight must be rank 3");
  check(stride >= 1, "conv1d: stride must be >= 1");
  size_t B = x.shape()[0], Tin = x.shape()[1], Ci = x.shape()[2];
  size_t K = w.shape()[0], Co = w.shape()[2];
  check(w.shape()[1] == Ci, "conv1d: weight Cin=", w.shape()[1], " != input channels ", Ci);
  if (b.defined()) check(b.shape() == Shape{Co}, "conv1d: bias shape mismatch");
  auto [Tout, pad] = conv_geometry(Tin, K, stride);

  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bn = b.defined() ? b.node() : nullptr;
  std::vector<Node<T>*> inputs = {xn, wn};
  if (bn) inputs.push_back(bn);

  size_t P = pad;
  Tensor<T> y = g.make({B, Tout, Co}, inputs, [=](Node<T>& node) {
    for (size_t bi = 0; bi < B; ++bi) {
      const T* xb = xn->value.data() + bi * Tin * Ci;
      const T* gy = node.grad.data() + bi * Tout * Co;
      T* gx = xn->requires_grad ? xn->grad.data() + bi * Tin * Ci : nullptr;
      for (size_t i = 0; i < Tout; ++i) {
        const T* gyr = gy + i * Co;
        for (size_t k = 0; k < K; ++k) {
          long t = long(i * stride) - long(P) + long(k);
          if (t < 0 || t >= long(Tin)) continue;
          const T* xr = xb + size_t(t) * Ci;
          if (gx) {
            T* gxr = gx + size_t(t) * Ci;
            for (size_t ci = 0; ci < Ci; ++ci) {
              const T* wr = wn->value.data() + (k * Ci + ci) * Co;
              T acc = T(0);
              for (size_t co = 0; co < Co; ++co) acc += wr[co] * gyr[co];
              gxr[ci] += acc;
            }
          }
          if (wn->requires_grad) {
            for (size_t ci = 0; ci < Ci; ++ci) {
              T xv = xr[ci];
              if (xv == T(0)) continue;
              T* gwr = wn->grad.data() + (k * Ci + ci) * Co;
              for (size_t co = 0; co < Co; ++co) gwr[co] += xv * gyr[co];
            }
          }
        }
      }
    }
    if (bn && bn->requires_grad)
      for (size_t r = 0; r < B * Tout; ++r)
        for (size_t co = 0; co < Co; ++co) bn->grad[co] += node.grad[r * Co + co];
  });

  Node<T>* yn = y.node();
  if (bn)
    for (size_t r = 0; r < B * Tout; ++r)
      std::copy(bn->value.begin(), bn->value.end(), yn->value.begin() + r * Co);
  for (size_t bi = 0; bi < B; ++bi) {
    const T* xb = xn->value.data() + bi * Tin * Ci;
    T* yb = yn->value.data() + bi * Tout * Co;
    for (size_t i = 0; i < Tout; ++i) {
      T* yr = yb + i * Co;
      for (size_t k = 0; k < K; ++k) {
        long t = long(i * stride) - long(P) + long(k);
        if (t < 0 || t >= long(Tin)) continue;
        const T* xr = xb + size_t(t) * Ci;
        for (size_t ci = 0; ci < Ci; ++ci) {
          T xv = xr[ci];
          if (xv == T(0)) continue;
          const T* wr = wn->value.data() + (k * Ci + ci) * Co;
          for (size_t co = 0; co < Co; ++co) yr[co] += xv * wr[co];
        }
      }
    }
  }
  return y;
}

/// Adjoint of conv1d. x: B×T×Cin, w: K×Cout×Cin, output B×(T·s)×Cout.
/// With tied weights, forward(conv1d_transpose) equals conv1d's input gradient.
template <typename T>
Tensor<T> conv1d_transpose(Graph<T>& g, Tensor<T> x, Tensor<T> w, Tensor<T> b, size_t stride) {
  check(x.shape().size() == 3, "conv1d_transpose: input must be rank 3");
  check(w.shape().size() == 3, "conv1d_transpose: weight must be rank 3");
  size_t B = x.shape()[0], Tin = x.shape()[1], Ci = x.shape()[2];
  size_t K = w.shape()[0], Co = w.shape()[1];
  check(w.shape()[2] == Ci, "conv1d_transpose: weight Cin=", w.shape()[2], " != input channels ", Ci);
  if (b.defined()) check(b.shape() == Shape{Co}, "conv1d_transpose: bias shape mismatch");
  size_t Tout = Tin * stride;
  size_t P = K >= stride ? (K - stride) / 2 : 0;  // pad of the conv this op inverts

  Node<T>* xn = x.node();
  Node<T>* wn = w.node();
  Node<T>* bn = b.defined() ? b.node() : nullptr;
  std::vector<Node<T>*> inputs = {xn, wn};
  if (bn) inputs.push_back(bn);

  Tensor<T> y = g.make({B, Tout, Co}, inputs, [=](Node<T>& node) {
    for (size_t bi = 0; bi < B; ++bi) {
      const T* xb = xn->value.data() + bi * Tin * Ci;
      const T* gy = node.grad.data() + bi * Tout * Co;
      T* gx = xn->requires_grad ? xn->grad.data() + bi * Tin * Ci : nullptr;
      for (size_t i = 0; i < Tin; ++i) {
        for (size_t k = 0; k < K; ++k) {
          long j = long(i * stride) - long(P) + long(k);
          if (j < 0 || j >= long(Tout)) continue;
          const T* gyr = gy + size_t(j) * Co;
          if (gx) {
            T* gxr = gx + i * Ci;
            for (size_t co = 0; co < Co; ++co) {
              T gv = gyr[co];
              if (gv == T(0)) continue;
              const T* wr = wn->value.data() + (k * Co + co) * Ci;
              for (size_t ci = 0; ci < Ci; ++ci) gxr[ci] += gv * wr[ci];
            }
          }
          if (wn->requires_grad) {
            const T* xr = xb + i * Ci;
            for (size_t co = 0; co < Co; ++co) {
              T gv = gyr[co];
              if (gv == T(0)) continue;
              T* gwr = wn->grad.data() + (k * Co + co) * Ci;
              for (size_t ci = 0; ci < Ci; ++ci) gwr[ci] += gv * xr[ci];
            }
          }
        }
      }
    }
    if (bn && bn->requires_grad)
      for (size_t r = 0; r < B * Tout; ++r)
        for (size_t co = 0; co < Co; ++co) bn->grad[co] += node.grad[r * Co + co];
  });

  Node<T>* yn = y.node();
  if (bn)
    for (size_t r = 0; r < B * Tout; ++r)
      std::copy(bn->value.begin(), bn->value.end(), yn->value.begin() + r * Co);
  for (size_t bi = 0; bi < B; ++bi) {
    const T* xb = xn->value.data() + bi * Tin * Ci;
    T* yb = yn->value.data() + bi * Tout * Co;
    for (size_t i = 0; i < Tin; ++i) {
      const T* xr = xb + i * Ci;
      for (size_t k = 0; k < K; ++k) {
        long j = long(i * stride) - long(P) + long(k);
        if (j < 0 || j >= long(Tout)) continue;
        T* yr = yb + size_t(j) * Co;
        for (size_t co = 0; co < Co; ++co) {
          const T* wr = wn->value.data() + (k * Co + co) * Ci;
          T acc = T(0);
          for (size_t ci = 0; ci < Ci; ++ci) acc += wr[ci] * xr[ci];
          yr[co] += acc;
        }
      }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Normalization / reductions
// ---------------------------------------------------------------------------

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(Graph<T>& g, Tensor<T> x) {
  size_t D = x.shape().back();
  size_t rows = x.size() / D;
  Node<T>* xn = x.node();
  Tensor<T> y = g.make(xn->shape, {xn}, [xn, rows, D](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t r = 0; r < rows; ++r) {
      const T* yv = node.value.data() + r * D;
      const T* gy = node.grad.data() + r * D;
      T dot = T(0);
      for (size_t i = 0; i < D; ++i) dot += gy[i] * yv[i];
      T* gx = xn->grad.data() + r * D;
      for (size_t i = 0; i < D; ++i) gx[i] += yv[i] * (gy[i] - dot);
    }
  });
  Node<T>* yn = y.node();
  for (size_t r = 0; r < rows; ++r) {
    const T* xv = xn->value.data() + r * D;
    T* yv = yn->value.data() + r * D;
    T mx = xv[0];
    for (size_t i = 1; i < D; ++i) mx = std::max(mx, xv[i]);
    T sum = T(0);
    for (size_t i = 0; i < D; ++i) {
      yv[i] = std::exp(xv[i] - mx);
      sum += yv[i];
    }
    for (size_t i = 0; i < D; ++i) yv[i] /= sum;
  }
  return y;
}

/// Layer normalization over the last axis with affine gain/bias.
template <typename T>
Tensor<T> layer_norm(Graph<T>& g, Tensor<T> x, Tensor<T> gain, Tensor<T> bias, T eps = T(1e-5)) {
  size_t D = x.shape().back();
  check(gain.shape() == Shape{D} && bias.shape() == Shape{D}, "layer_norm: affine shape mismatch");
  size_t rows = x.size() / D;
  Node<T>* xn = x.node();
  Node<T>* gn = gain.node();
  Node<T>* bn = bias.node();

  // Normalized values and inverse stddev are needed in backward; store them in
  // a shared buffer captured by the closure.
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto inv = std::make_shared<std::vector<T>>(rows);

  Tensor<T> y = g.make(xn->shape, {xn, gn, bn}, [xn, gn, bn, xhat, inv, rows, D](Node<T>& node) {
    for (size_t r = 0; r < rows; ++r) {
      const T* xh = xhat->data() + r * D;
      const T* gy = node.grad.data() + r * D;
      if (gn->requires_grad)
        for (size_t i = 0; i < D; ++i) gn->grad[i] += gy[i] * xh[i];
      if (bn->requires_grad)
        for (size_t i = 0; i < D; ++i) bn->grad[i] += gy[i];
      if (xn->requires_grad) {
        T mean_g = T(0), mean_gx = T(0);
        for (size_t i = 0; i < D; ++i) {
          T gh = gy[i] * gn->value[i];
          mean_g += gh;
          mean_gx += gh * xh[i];
        }
        mean_g /= T(D);
        mean_gx /= T(D);
        T* gx = xn->grad.data() + r * D;
        T iv = (*inv)[r];
        for (size_t i = 0; i < D; ++i) {
          T gh = gy[i] * gn->value[i];
          gx[i] += iv * (gh - mean_g - xh[i] * mean_gx);
        }
      }
    }
  });
  Node<T>* yn = y.node();
  for (size_t r = 0; r < rows; ++r) {
    const T* xv = xn->value.data() + r * D;
    T mean = T(0);
    for (size_t i = 0; i < D; ++i) mean += xv[i];
    mean /= T(D);
    T var = T(0);
    for (size_t i = 0; i < D; ++i) var += (xv[i] - mean) * (xv[i] - mean);
    var /= T(D);
    T iv = T(1) / std::sqrt(var + eps);
    (*inv)[r] = iv;
    T* xh = xhat->data() + r * D;
    T* yv = yn->value.data() + r * D;
    for (size_t i = 0; i < D; ++i) {
      xh[i] = (xv[i] - mean) * iv;
      yv[i] = xh[i] * gn->value[i] + bn->value[i];
    }
  }
  return y;
}

/// Mean over the time axis: B×S×D -> B×D.
template <typename T>
Tensor<T> global_avg_pool(Graph<T>& g, Tensor<T> x) {
  check(x.shape().size() == 3, "global_avg_pool: expected rank 3");
  size_t B = x.shape()[0], S = x.shape()[1], D = x.shape()[2];
  Node<T>* xn = x.node();
  Tensor<T> y = g.make({B, D}, {xn}, [xn, B, S, D](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t b = 0; b < B; ++b)
      for (size_t s = 0; s < S; ++s)
        for (size_t d = 0; d < D; ++d)
          xn->grad[(b * S + s) * D + d] += node.grad[b * D + d] / T(S);
  });
  Node<T>* yn = y.node();
  for (size_t b = 0; b < B; ++b)
    for (size_t s = 0; s < S; ++s)
      for (size_t d = 0; d < D; ++d) yn->value[b * D + d] += xn->value[(b * S + s) * D + d] / T(S);
  return y;
}

/// Inverted-dropout mask drawn once at op construction; identity when p == 0.
template <typename T>
Tensor<T> dropout(Graph<T>& g, Tensor<T> x, double p, RngStream& rng) {
  if (p <= 0.0) return x;
  check(p < 1.0, "dropout: p must be < 1");
  auto mask = std::make_shared<std::vector<T>>(x.size());
  T keep = T(1.0 / (1.0 - p));
  for (size_t i = 0; i < x.size(); ++i) (*mask)[i] = rng.bernoulli(p) ? T(0) : keep;
  Node<T>* xn = x.node();
  Tensor<T> y = g.make(xn->shape, {xn}, [xn, mask](Node<T>& node) {
    if (!xn->requires_grad) return;
    for (size_t i = 0; i < node.grad.size(); ++i) xn->grad[i] += node.grad[i] * (*mask)[i];
  });
  Node<T>* yn = y.node();
  for (size_t i = 0; i < x.size(); ++i) yn->value[i] = xn->value[i] * (*mask)[i];
  return y;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean binary cross entropy over a batch of probabilities. Probabilities are
/// clipped to [eps, 1-eps]; clipped entries get zero gradient.
template <typename T>
Tensor<T> bce_loss(Graph<T>& g, Tensor<T> p, const std::vector<T>& labels, T eps = T(1e-7)) {
  size_t B = p.size();
  check(labels.size() == B, "bce_loss: labels length ", labels.size(), " != batch ", B);
  Node<T>* pn = p.node();
  auto y = std::make_shared<std::vector<T>>(labels);
  Tensor<T> out = g.make({1}, {pn}, [pn, y, B, eps](Node<T>& node) {
    if (!pn->requires_grad) return;
    T go = node.grad[0] / T(B);
    for (size_t i = 0; i < B; ++i) {
      T pv = pn->value[i];
      if (pv <= eps || pv >= T(1) - eps) continue;
      pn->grad[i] += go * (pv - (*y)[i]) / (pv * (T(1) - pv));
    }
  });
  T total = T(0);
  for (size_t i = 0; i < B; ++i) {
    T pc = std::clamp(pn->value[i], eps, T(1) - eps);
    total -= (*y)[i] * std::log(pc) + (T(1) - (*y)[i]) * std::log(T(1) - pc);
  }
  out.node()->value[0] = total / T(B);
  return out;
}

/// Mean squared error over all cells of pred vs target.
template <typename T>
Tensor<T> mse_loss(Graph<T>& g, Tensor<T> pred, Tensor<T> target) {
  check(pred.shape() == target.shape(), "mse_loss: shape mismatch");
  size_t N = pred.size();
  Node<T>* pn = pred.node();
  Node<T>* tn = target.node();
  Tensor<T> out = g.make({1}, {pn, tn}, [pn, tn, N](Node<T>& node) {
    T go = node.grad[0] * T(2) / T(N);
    for (size_t i = 0; i < N; ++i) {
      T d = pn->value[i] - tn->value[i];
      if (pn->requires_grad) pn->grad[i] += go * d;
      if (tn->requires_grad) tn->grad[i] -= go * d;
    }
  });
  T total = T(0);
  for (size_t i = 0; i < N; ++i) {
    T d = pn->value[i] - tn->value[i];
    total += d * d;
  }
  out.node()->value[0] = total / T(N);
  return out;
}

/// KL regularizer for a per-dimension Gaussian mixture posterior against
/// N(0,1) with uniform mixture prior. Inputs are B×D×K; returns the batch
/// mean of the per-sample sum over dimensions of
///   sum_k w_k KL(N(mu_k, sigma_k^2) || N(0,1)) + KL(w || Uniform(K)),
/// with w = softmax over the K axis.
template <typename T>
Tensor<T> kld_mixture(Graph<T>& g, Tensor<T> mix_logits, Tensor<T> mu, Tensor<T> logvar) {
  const Shape& s = mix_logits.shape();
  check(s.size() == 3, "kld_mixture: expected rank 3 (B×D×K)");
  check(mu.shape() == s && logvar.shape() == s, "kld_mixture: shape mismatch");
  size_t B = s[0], D = s[1], K = s[2];
  size_t rows = B * D;
  Node<T>* ln = mix_logits.node();
  Node<T>* mn = mu.node();
  Node<T>* vn = logvar.node();

  auto softmax_row = [K](const T* logits, T* w) {
    T mx = logits[0];
    for (size_t k = 1; k < K; ++k) mx = std::max(mx, logits[k]);
    T sum = T(0);
    for (size_t k = 0; k < K; ++k) {
      w[k] = std::exp(logits[k] - mx);
      sum += w[k];
    }
    for (size_t k = 0; k < K; ++k) w[k] /= sum;
  };

  Tensor<T> out = g.make({1}, {ln, mn, vn}, [ln, mn, vn, rows, K, B, softmax_row](Node<T>& node) {
    T go = node.grad[0] / T(B);
    std::vector<T> w(K);
    T logK = std::log(T(K));
    for (size_t r = 0; r < rows; ++r) {
      const T* lg = ln->value.data() + r * K;
      const T* um = mn->value.data() + r * K;
      const T* lv = vn->value.data() + r * K;
      softmax_row(lg, w.data());
      if (mn->requires_grad)
        for (size_t k = 0; k < K; ++k) mn->grad[r * K + k] += go * w[k] * um[k];
      if (vn->requires_grad)
        for (size_t k = 0; k < K; ++k)
          vn->grad[r * K + k] += go * w[k] * T(0.5) * (std::exp(lv[k]) - T(1));
      if (ln->requires_grad) {
        T mean_q = T(0);
        std::vector<T> q(K);
        for (size_t k = 0; k < K; ++k) {
          T gauss = T(0.5) * (um[k] * um[k] + std::exp(lv[k]) - T(1) - lv[k]);
          T lw = w[k] > T(0) ? std::log(w[k]) : T(0);
          q[k] = gauss + lw + T(1) + logK;
          mean_q += w[k] * q[k];
        }
        for (size_t k = 0; k < K; ++k) ln->grad[r * K + k] += go * w[k] * (q[k] - mean_q);
      }
    }
  });

  T total = T(0);
  {
    std::vector<T> w(K);
    T logK = std::log(T(K));
    for (size_t r = 0; r < rows; ++r) {
      const T* lg = ln->value.data() + r * K;
      const T* um = mn->value.data() + r * K;
      const T* lv = vn->value.data() + r * K;
      softmax_row(lg, w.data());
      for (size_t k = 0; k < K; ++k) {
        T gauss = T(0.5) * (um[k] * um[k] + std::exp(lv[k]) - T(1) - lv[k]);
        total += w[k] * gauss;
        if (w[k] > T(0)) total += w[k] * (std::log(w[k]) + logK);
      }
    }
  }
  out.node()->value[0] = total / T(B);
  return out;
}

/// Samples one latent value per (batch, dimension) from the selected mixture
/// component with Gaussian reparameterization. `components` and `noise` are
/// drawn outside the graph (length B·D each). Mixture weights receive a
/// straight-through gradient (selection treated as the softmax weights);
/// mu/logvar of the selected component get the reparameterized gradient.
template <typename T>
Tensor<T> mixture_reparam(Graph<T>& g, Tensor<T> mix_logits, Tensor<T> mu, Tensor<T> logvar,
                          const std::vector<int>& components, const std::vector<T>& noise) {
  const Shape& s = mix_logits.shape();
  check(s.size() == 3, "mixture_reparam: expected rank 3 (B×D×K)");
  check(mu.shape() == s && logvar.shape() == s, "mixture_reparam: shape mismatch");
  size_t B = s[0], D = s[1], K = s[2];
  size_t rows = B * D;
  check(components.size() == rows && noise.size() == rows, "mixture_reparam: sample buffers must be B·D");
  Node<T>* ln = mix_logits.node();
  Node<T>* mn = mu.node();
  Node<T>* vn = logvar.node();
  auto comp = std::make_shared<std::vector<int>>(components);
  auto eps = std::make_shared<std::vector<T>>(noise);

  Tensor<T> z = g.make({B, D}, {ln, mn, vn}, [ln, mn, vn, comp, eps, rows, K](Node<T>& node) {
    std::vector<T> w(K), zk(K);
    for (size_t r = 0; r < rows; ++r) {
      T gz = node.grad[r];
      if (gz == T(0)) continue;
      int j = (*comp)[r];
      T e = (*eps)[r];
      const T* lv = vn->value.data() + r * K;
      if (mn->requires_grad) mn->grad[r * K + j] += gz;
      if (vn->requires_grad)
        vn->grad[r * K + j] += gz * T(0.5) * std::exp(T(0.5) * lv[j]) * e;
      if (ln->requires_grad) {
        const T* lg = ln->value.data() + r * K;
        const T* um = mn->value.data() + r * K;
        T mx = lg[0];
        for (size_t k = 1; k < K; ++k) mx = std::max(mx, lg[k]);
        T sum = T(0);
        for (size_t k = 0; k < K; ++k) {
          w[k] = std::exp(lg[k] - mx);
          sum += w[k];
        }
        T mean_z = T(0);
        for (size_t k = 0; k < K; ++k) {
          w[k] /= sum;
          zk[k] = um[k] + std::exp(T(0.5) * lv[k]) * e;
          mean_z += w[k] * zk[k];
        }
        for (size_t k = 0; k < K; ++k) ln->grad[r * K + k] += gz * w[k] * (zk[k] - mean_z);
      }
    }
  });
  Node<T>* zn = z.node();
  for (size_t r = 0; r < rows; ++r) {
    int j = (*comp)[r];
    check(j >= 0 && size_t(j) < K, "mixture_reparam: component index out of range");
    zn->value[r] = mn->value[r * K + j] + std::exp(T(0.5) * vn->value[r * K + j]) * (*eps)[r];
  }
  return z;
}

}  // namespace mtsc::ad
