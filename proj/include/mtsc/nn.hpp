#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mtsc/ops.hpp"

namespace mtsc::ad {

enum class Init { uniform_fan_in, zeros, ones };

/// Owns a model's parameters. Parameter nodes persist across forward graphs;
/// names are unique and creation order is fixed, so a given seed always
/// produces identical parameter bytes.
template <typename T>
class ParamStore {
public:
  Tensor<T> create(const std::string& name, Shape shape, Init init, size_t fan_in, RngStream& rng) {
    for (const auto& p : params_)
      check(p.name != name, "duplicate parameter name: ", name);
    auto node = std::make_unique<Node<T>>();
    node->shape = std::move(shape);
    node->value.resize(numel(node->shape));
    node->grad.assign(node->value.size(), T(0));
    node->requires_grad = true;
    switch (init) {
      case Init::uniform_fan_in: {
        check(fan_in > 0, "uniform_fan_in requires fan_in > 0 for ", name);
        double bound = 1.0 / std::sqrt(double(fan_in));
        for (T& v : node->value) v = T(rng.uniform(-bound, bound));
        break;
      }
      case Init::zeros:
        break;
      case Init::ones:
        std::fill(node->value.begin(), node->value.end(), T(1));
        break;
    }
    params_.push_back({name, std::move(node)});
    return Tensor<T>(params_.back().node.get());
  }

  size_t count() const { return params_.size(); }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.node->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.node->grad.begin(), p.node->grad.end(), T(0));
  }

  const std::string& name(size_t i) const { return params_[i].name; }
  Node<T>* node(size_t i) { return params_[i].node.get(); }
  const Node<T>* node(size_t i) const { return params_[i].node.get(); }

  Tensor<T> find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return Tensor<T>(p.node.get());
    throw Error(format_msg("parameter not found: ", name));
  }

private:
  struct Entry {
    std::string name;
    std::unique_ptr<Node<T>> node;
  };
  std::vector<Entry> params_;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct DenseParams {
  Tensor<T> w, b;

  static DenseParams create(ParamStore<T>& ps, const std::string& name, size_t in, size_t out,
                            RngStream& rng) {
    DenseParams p;
    p.w = ps.create(name + ".w", {in, out}, Init::uniform_fan_in, in, rng);
    p.b = ps.create(name + ".b", {out}, Init::zeros, 0, rng);
    return p;
  }

  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) const { return linear(g, x, w, b); }
};

template <typename T>
struct Conv1dParams {
  Tensor<T> w, b;
  size_t stride = 1;

  static Conv1dParams create(ParamStore<T>& ps, const std::string& name, size_t kernel, size_t in,
                             size_t out, size_t stride, RngStream& rng) {
    Conv1dParams p;
    p.w = ps.create(name + ".w", {kernel, in, out}, Init::uniform_fan_in, kernel * in, rng);
    p.b = ps.create(name + ".b", {out}, Init::zeros, 0, rng);
    p.stride = stride;
    return p;
  }

  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) const { return conv1d(g, x, w, b, stride); }
};

template <typename T>
struct ConvTranspose1dParams {
  Tensor<T> w, b;
  size_t stride = 1;

  static ConvTranspose1dParams create(ParamStore<T>& ps, const std::string& name, size_t kernel,
                                      size_t in, size_t out, size_t stride, RngStream& rng) {
    ConvTranspose1dParams p;
    p.w = ps.create(name + ".w", {kernel, out, in}, Init::uniform_fan_in, kernel * in, rng);
    p.b = ps.create(name + ".b", {out}, Init::zeros, 0, rng);
    p.stride = stride;
    return p;
  }

  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) const {
    return conv1d_transpose(g, x, w, b, stride);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain, bias;

  static LayerNormParams create(ParamStore<T>& ps, const std::string& name, size_t dim,
                                RngStream& rng) {
    LayerNormParams p;
    p.gain = ps.create(name + ".gain", {dim}, Init::ones, 0, rng);
    p.bias = ps.create(name + ".bias", {dim}, Init::zeros, 0, rng);
    return p;
  }

  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) const { return layer_norm(g, x, gain, bias); }
};

/// Parameter-free sinusoidal positional table, S×D.
template <typename T>
std::vector<T> sinusoidal_encoding(size_t seq_len, size_t dim) {
  std::vector<T> table(seq_len * dim);
  for (size_t pos = 0; pos < seq_len; ++pos) {
    for (size_t i = 0; i < dim; ++i) {
      double angle = double(pos) / std::pow(10000.0, double(2 * (i / 2)) / double(dim));
      table[pos * dim + i] = T(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return table;
}

/// Transformer encoder layer (post-norm): multi-headed self attention with
/// residual + layer norm, then a 2-layer ReLU feed-forward with residual +
/// layer norm. Exposes the per-head attention maps.
template <typename T>
struct EncoderLayerParams {
  DenseParams<T> wq, wk, wv, wo, ff1, ff2;
  LayerNormParams<T> norm1, norm2;
  size_t heads = 1;
  size_t head_dim = 1;

  static EncoderLayerParams create(ParamStore<T>& ps, const std::string& name, size_t dim,
                                   size_t heads, size_t head_dim, size_t ffn_dim, RngStream& rng) {
    check(dim == heads * head_dim, "encoder layer: dim ", dim, " != heads*head_dim ",
          heads * head_dim);
    EncoderLayerParams p;
    p.wq = DenseParams<T>::create(ps, name + ".wq", dim, dim, rng);
    p.wk = DenseParams<T>::create(ps, name + ".wk", dim, dim, rng);
    p.wv = DenseParams<T>::create(ps, name + ".wv", dim, dim, rng);
    p.wo = DenseParams<T>::create(ps, name + ".wo", dim, dim, rng);
    p.ff1 = DenseParams<T>::create(ps, name + ".ff1", dim, ffn_dim, rng);
    p.ff2 = DenseParams<T>::create(ps, name + ".ff2", ffn_dim, dim, rng);
    p.norm1 = LayerNormParams<T>::create(ps, name + ".norm1", dim, rng);
    p.norm2 = LayerNormParams<T>::create(ps, name + ".norm2", dim, rng);
    p.heads = heads;
    p.head_dim = head_dim;
    return p;
  }

  /// x: B×S×D. If `attention_out` is non-null it receives the softmaxed
  /// attention tensor of shape (B·H)×S×S.
  Tensor<T> operator()(Graph<T>& g, Tensor<T> x, Tensor<T>* attention_out = nullptr,
                       double attn_dropout = 0.0, RngStream* dropout_rng = nullptr) const {
    Tensor<T> q = split_heads(g, wq(g, x), heads);
    Tensor<T> k = split_heads(g, wk(g, x), heads);
    Tensor<T> v = split_heads(g, wv(g, x), heads);
    T inv_sqrt = T(1) / std::sqrt(T(head_dim));
    Tensor<T> scores = bmm(g, q, k, /*tb=*/true, inv_sqrt);
    Tensor<T> attn = softmax(g, scores);
    if (attention_out) *attention_out = attn;
    Tensor<T> ctx = attn;
    if (attn_dropout > 0.0 && dropout_rng) ctx = dropout(g, ctx, attn_dropout, *dropout_rng);
    Tensor<T> heads_out = bmm(g, ctx, v, /*tb=*/false);
    Tensor<T> attended = wo(g, merge_heads(g, heads_out, heads));
    Tensor<T> h1 = norm1(g, add(g, x, attended));
    Tensor<T> ff = ff2(g, relu(g, ff1(g, h1)));
    if (attn_dropout > 0.0 && dropout_rng) ff = dropout(g, ff, attn_dropout, *dropout_rng);
    return norm2(g, add(g, h1, ff));
  }
};

// ---------------------------------------------------------------------------
// Recurrent layers (built from primitive ops; gradients via the tape)
// ---------------------------------------------------------------------------

enum class RnnCell { lstm, gru };

/// One direction of an LSTM/GRU layer. Weight layout:
///   LSTM: w In×4U (i,f,g,o), u U×4U, b 4U (single combined bias)
///   GRU:  w In×3U (z,r,n), u U×3U, b 3U; h' = (1-z)∘h + z∘n, reset applied
///         to the recurrent term of n.
template <typename T>
struct RnnDirectionParams {
  Tensor<T> w, u, b;
  RnnCell cell = RnnCell::lstm;
  size_t units = 0;

  static RnnDirectionParams create(ParamStore<T>& ps, const std::string& name, RnnCell cell,
                                   size_t in, size_t units, RngStream& rng) {
    size_t gates = cell == RnnCell::lstm ? 4 : 3;
    RnnDirectionParams p;
    p.w = ps.create(name + ".w", {in, gates * units}, Init::uniform_fan_in, in, rng);
    p.u = ps.create(name + ".u", {units, gates * units}, Init::uniform_fan_in, units, rng);
    p.b = ps.create(name + ".b", {gates * units}, Init::zeros, 0, rng);
    p.cell = cell;
    p.units = units;
    return p;
  }

  /// x: B×T×In -> B×T×U (forward scan).
  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) const {
    size_t B = x.shape()[0], Tn = x.shape()[1];
    size_t U = units;
    Tensor<T> xw = linear(g, x, w, b);  // B×T×(gates·U)
    Tensor<T> h = g.zeros({B, U});
    Tensor<T> c = g.zeros({B, U});
    std::vector<Tensor<T>> outputs;
    outputs.reserve(Tn);
    for (size_t t = 0; t < Tn; ++t) {
      Tensor<T> pre_x = time_step(g, xw, t);
      Tensor<T> pre_h = linear(g, h, u);
      if (cell == RnnCell::lstm) {
        Tensor<T> pre = add(g, pre_x, pre_h);
        Tensor<T> i = sigmoid(g, slice_last(g, pre, 0, U));
        Tensor<T> f = sigmoid(g, slice_last(g, pre, U, U));
        Tensor<T> cand = tanh(g, slice_last(g, pre, 2 * U, U));
        Tensor<T> o = sigmoid(g, slice_last(g, pre, 3 * U, U));
        c = add(g, mul(g, f, c), mul(g, i, cand));
        h = mul(g, o, tanh(g, c));
      } else {
        Tensor<T> z = sigmoid(g, add(g, slice_last(g, pre_x, 0, U), slice_last(g, pre_h, 0, U)));
        Tensor<T> r = sigmoid(g, add(g, slice_last(g, pre_x, U, U), slice_last(g, pre_h, U, U)));
        Tensor<T> n = tanh(g, add(g, slice_last(g, pre_x, 2 * U, U),
                                  mul(g, r, slice_last(g, pre_h, 2 * U, U))));
        // h' = (1-z)∘h + z∘n
        h = add(g, mul(g, affine(g, z, T(-1), T(1)), h), mul(g, z, n));
      }
      outputs.push_back(h);
    }
    return stack_time(g, outputs);
  }
};

/// Full recurrent layer, optionally bidirectional (output is [forward;
/// backward] concatenated per timestep -> 2U channels).
template <typename T>
struct RecurrentLayerParams {
  RnnDirectionParams<T> fwd;
  RnnDirectionParams<T> bwd;
  bool bidirectional = false;

  static RecurrentLayerParams create(ParamStore<T>& ps, const std::string& name, RnnCell cell,
                                     size_t in, size_t units, bool bidirectional, RngStream& rng) {
    RecurrentLayerParams p;
    p.fwd = RnnDirectionParams<T>::create(ps, name + ".fwd", cell, in, units, rng);
    if (bidirectional)
      p.bwd = RnnDirectionParams<T>::create(ps, name + ".bwd", cell, in, units, rng);
    p.bidirectional = bidirectional;
    return p;
  }

  Tensor<T> operator()(Graph<T>& g, Tensor<T> x) const {
    Tensor<T> f = fwd(g, x);
    if (!bidirectional) return f;
    Tensor<T> b = reverse_time(g, bwd(g, reverse_time(g, x)));
    return concat_last(g, f, b);
  }

  size_t output_channels() const { return bidirectional ? 2 * fwd.units : fwd.units; }
};

}  // namespace mtsc::ad
