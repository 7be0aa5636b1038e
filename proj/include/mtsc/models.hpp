#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mtsc/csv.hpp"
#include "mtsc/dataset.hpp"
#include "mtsc/nn.hpp"

namespace mtsc::models {

using ad::Graph;
using ad::ParamStore;
using ad::Tensor;

struct ConvLayerSpec {
  size_t kernel = 4;
  size_t stride = 2;
  size_t out_channels = 0;
};

enum class ModelFamily { mhsa, lstm, vae };

// ---------------------------------------------------------------------------
// Configurations. The default conv stacks, feed-forward width and per-
// direction recurrent sizes are chosen so the built models land on the
// published parameter budgets: 7.9M (Conv-MHSA), 24.7M (Conv-LSTM),
// 28.4M (EX-Conv-LSTM) and 18.3M (VAE-Conv-GRU).
// ---------------------------------------------------------------------------

struct ConvMHSAConfig {
  size_t input_channels = kChannelCount;
  std::vector<ConvLayerSpec> conv_stack = {{4, 2, 256}, {4, 2, 512}, {4, 2, 512}};
  size_t encoder_layers = 4;
  size_t heads = 8;
  size_t head_dim = 64;
  size_t ffn_dim = 512;
  bool positional_encoding = true;  // parameter-free sinusoidal, added post-conv
  double dropout = 0.0;

  size_t dim() const { return heads * head_dim; }
  size_t stride_product() const {
    size_t p = 1;
    for (const auto& l : conv_stack) p *= l.stride;
    return p;
  }
  void validate() const {
    check(!conv_stack.empty(), "conv-mhsa: empty conv stack");
    check(conv_stack.back().out_channels == dim(),
          "conv-mhsa: last conv channels ", conv_stack.back().out_channels,
          " must equal heads*head_dim = ", dim());
    check(dim() % heads == 0, "conv-mhsa: dim not divisible by heads");
  }
};

inline ConvMHSAConfig conv_mhsa_default() { return ConvMHSAConfig{}; }

/// Desk-scale Conv-MHSA (D=64, 2 encoder layers); same temporal reduction.
inline ConvMHSAConfig conv_mhsa_small() {
  ConvMHSAConfig cfg;
  cfg.conv_stack = {{4, 2, 32}, {4, 2, 64}, {4, 2, 64}};
  cfg.encoder_layers = 2;
  cfg.heads = 4;
  cfg.head_dim = 16;
  cfg.ffn_dim = 64;
  return cfg;
}

struct ConvLSTMConfig {
  size_t input_channels = kChannelCount;
  std::vector<ConvLayerSpec> conv_stack = {{4, 2, 256}, {4, 2, 512}, {4, 2, 512}};
  std::vector<ConvLayerSpec> extra_convs;  // EX variant adds 2 more reductions
  size_t lstm_layers = 4;
  size_t lstm_units = 512;  // per direction

  void validate() const {
    check(!conv_stack.empty(), "conv-lstm: empty conv stack");
    check(lstm_layers >= 1 && lstm_units >= 1, "conv-lstm: bad recurrent sizes");
  }
};

inline ConvLSTMConfig conv_lstm_default() { return ConvLSTMConfig{}; }

inline ConvLSTMConfig ex_conv_lstm_default() {
  ConvLSTMConfig cfg;
  cfg.extra_convs = {{8, 2, 512}, {8, 2, 512}};  // K=8 lands near the 28.4M budget
  return cfg;
}

inline ConvLSTMConfig conv_lstm_small() {
  ConvLSTMConfig cfg;
  cfg.conv_stack = {{4, 2, 32}, {4, 2, 48}, {4, 2, 48}};
  cfg.lstm_layers = 2;
  cfg.lstm_units = 48;
  return cfg;
}

struct ShortLSTMConfig {
  size_t input_channels = kChannelCount;
  size_t slice_len = 128;  // random slices fed directly to the recurrent stack
  size_t lstm_layers = 4;
  size_t lstm_units = 512;

  void validate() const { check(slice_len >= 1, "short-lstm: bad slice length"); }
};

inline ShortLSTMConfig short_lstm_default() { return ShortLSTMConfig{}; }

inline ShortLSTMConfig short_lstm_small() {
  ShortLSTMConfig cfg;
  cfg.lstm_layers = 2;
  cfg.lstm_units = 48;
  return cfg;
}

struct VAEConvGRUConfig {
  size_t input_channels = kChannelCount;
  std::vector<ConvLayerSpec> encoder_convs = {{4, 2, 64}, {4, 2, 128}, {4, 2, 256}, {4, 2, 256}};
  size_t gru1_units = 256;
  ConvLayerSpec mid_conv = {4, 2, 512};
  size_t gru2_units = 512;
  size_t head_proj = 384;  // bottleneck feeding the three mixture heads
  size_t latent_dim = 512;
  size_t components = 8;
  size_t decoder_len = 128;  // timesteps the broadcast latent is expanded to
  size_t seed_dim = 512;
  size_t dec_gru1_units = 512;
  ConvLayerSpec dec_mid_tconv = {4, 2, 512};
  size_t dec_gru2_units = 256;
  std::vector<ConvLayerSpec> decoder_tconvs = {{4, 2, 256}, {4, 2, 128}, {4, 2, 64},
                                               {4, 2, kChannelCount}};

  size_t reconstruction_len() const {
    size_t len = decoder_len * dec_mid_tconv.stride;
    for (const auto& l : decoder_tconvs) len *= l.stride;
    return len;
  }
  void validate() const {
    check(!encoder_convs.empty() && !decoder_tconvs.empty(), "vae: empty conv specs");
    check(decoder_tconvs.back().out_channels == input_channels,
          "vae: decoder must end on the input channel count");
    check(latent_dim >= 1 && components >= 1, "vae: bad latent sizes");
  }
};

inline VAEConvGRUConfig vae_conv_gru_default() { return VAEConvGRUConfig{}; }

inline VAEConvGRUConfig vae_conv_gru_small() {
  VAEConvGRUConfig cfg;
  cfg.encoder_convs = {{4, 2, 16}, {4, 2, 24}, {4, 2, 32}, {4, 2, 32}};
  cfg.gru1_units = 16;
  cfg.mid_conv = {4, 2, 32};
  cfg.gru2_units = 24;
  cfg.head_proj = 32;
  cfg.latent_dim = 24;
  cfg.components = 4;
  cfg.decoder_len = 8;
  cfg.seed_dim = 32;
  cfg.dec_gru1_units = 24;
  cfg.dec_mid_tconv = {4, 2, 32};
  cfg.dec_gru2_units = 16;
  cfg.decoder_tconvs = {{4, 2, 24}, {4, 2, 16}, {4, 2, 16}, {4, 2, kChannelCount}};
  return cfg;
}

// ---------------------------------------------------------------------------
// Attention capture
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionMap {
  size_t layer = 0;
  size_t batch = 0;
  size_t heads = 0;
  size_t seq = 0;
  std::vector<T> data;  // layout (batch*heads) × seq × seq, rows are queries

  T at(size_t b, size_t h, size_t query, size_t key) const {
    return data[((b * heads + h) * seq + query) * seq + key];
  }
};

// ---------------------------------------------------------------------------
// Classifier models
// ---------------------------------------------------------------------------

/// Common surface for the P(Y|X) models: normalized windowed batch in,
/// per-sample probability out.
template <typename T>
class ClassifierModel {
public:
  virtual ~ClassifierModel() = default;
  virtual Tensor<T> forward(Graph<T>& g, Tensor<T> x,
                            std::vector<AttentionMap<T>>* attention = nullptr) = 0;
  virtual ParamStore<T>& params() = 0;
  virtual const ParamStore<T>& params() const = 0;
  virtual std::string name() const = 0;
  virtual ModelFamily family() const = 0;
  /// Nonzero when the model consumes fixed-length random slices (Short-LSTM).
  virtual size_t slice_len() const { return 0; }

  size_t param_count() const { return params().param_count(); }
};

template <typename T>
class ConvMHSAModel : public ClassifierModel<T> {
public:
  ConvMHSAModel(ConvMHSAConfig config, uint64_t seed, std::string name = "conv-mhsa")
      : config_(std::move(config)), name_(std::move(name)) {
    config_.validate();
    RngStream rng = RngStream::derive(seed, 0x300de1);
    size_t in = config_.input_channels;
    for (size_t i = 0; i < config_.conv_stack.size(); ++i) {
      const auto& spec = config_.conv_stack[i];
      convs_.push_back(ad::Conv1dParams<T>::create(params_, "conv" + std::to_string(i),
                                                   spec.kernel, in, spec.out_channels,
                                                   spec.stride, rng));
      in = spec.out_channels;
    }
    for (size_t i = 0; i < config_.encoder_layers; ++i)
      encoders_.push_back(ad::EncoderLayerParams<T>::create(params_, "enc" + std::to_string(i),
                                                            config_.dim(), config_.heads,
                                                            config_.head_dim, config_.ffn_dim,
                                                            rng));
    head_ = ad::DenseParams<T>::create(params_, "head", config_.dim(), 1, rng);
    dropout_rng_ = std::make_unique<RngStream>(RngStream::derive(seed, 0xd409));
  }

  Tensor<T> forward(Graph<T>& g, Tensor<T> x,
                    std::vector<AttentionMap<T>>* attention = nullptr) override {
    check(x.shape().size() == 3 && x.shape()[2] == config_.input_channels,
          "conv-mhsa: expected B×T×", config_.input_channels, ", got ", shape_str(x.shape()));
    Tensor<T> h = x;
    for (const auto& conv : convs_) h = ad::relu(g, conv(g, h));
    size_t B = h.shape()[0], S = h.shape()[1], D = h.shape()[2];
    if (config_.positional_encoding)
      h = ad::add_rows(g, h, ad::sinusoidal_encoding<T>(S, D));
    for (size_t i = 0; i < encoders_.size(); ++i) {
      Tensor<T> attn;
      h = encoders_[i](g, h, attention ? &attn : nullptr, config_.dropout, dropout_rng_.get());
      if (attention) {
        AttentionMap<T> map;
        map.layer = i;
        map.batch = B;
        map.heads = config_.heads;
        map.seq = S;
        map.data.assign(attn.value().begin(), attn.value().end());
        attention->push_back(std::move(map));
      }
    }
    Tensor<T> pooled = ad::global_avg_pool(g, h);
    Tensor<T> logit = ad::reshape(g, head_(g, pooled), {B});
    return ad::sigmoid(g, logit);
  }

  ParamStore<T>& params() override { return params_; }
  const ParamStore<T>& params() const override { return params_; }
  std::string name() const override { return name_; }
  ModelFamily family() const override { return ModelFamily::mhsa; }
  const ConvMHSAConfig& config() const { return config_; }

private:
  ConvMHSAConfig config_;
  std::string name_;
  ParamStore<T> params_;
  std::vector<ad::Conv1dParams<T>> convs_;
  std::vector<ad::EncoderLayerParams<T>> encoders_;
  ad::DenseParams<T> head_;
  std::unique_ptr<RngStream> dropout_rng_;
};

template <typename T>
class ConvLSTMModel : public ClassifierModel<T> {
public:
  ConvLSTMModel(ConvLSTMConfig config, uint64_t seed, std::string name = "conv-lstm")
      : config_(std::move(config)), name_(std::move(name)) {
    config_.validate();
    RngStream rng = RngStream::derive(seed, 0xc157);
    size_t in = config_.input_channels;
    size_t idx = 0;
    for (const auto& spec : config_.conv_stack) {
      convs_.push_back(ad::Conv1dParams<T>::create(params_, "conv" + std::to_string(idx++),
                                                   spec.kernel, in, spec.out_channels,
                                                   spec.stride, rng));
      in = spec.out_channels;
    }
    for (const auto& spec : config_.extra_convs) {
      convs_.push_back(ad::Conv1dParams<T>::create(params_, "conv" + std::to_string(idx++),
                                                   spec.kernel, in, spec.out_channels,
                                                   spec.stride, rng));
      in = spec.out_channels;
    }
    for (size_t i = 0; i < config_.lstm_layers; ++i) {
      lstms_.push_back(ad::RecurrentLayerParams<T>::create(params_, "lstm" + std::to_string(i),
                                                           ad::RnnCell::lstm, in,
                                                           config_.lstm_units, true, rng));
      in = 2 * config_.lstm_units;
    }
    head_ = ad::DenseParams<T>::create(params_, "head", in, 1, rng);
  }

  Tensor<T> forward(Graph<T>& g, Tensor<T> x,
                    std::vector<AttentionMap<T>>* attention = nullptr) override {
    (void)attention;  // no attention maps in the recurrent models
    Tensor<T> h = x;
    for (const auto& conv : convs_) h = ad::relu(g, conv(g, h));
    for (const auto& lstm : lstms_) h = lstm(g, h);
    size_t B = h.shape()[0];
    Tensor<T> pooled = ad::global_avg_pool(g, h);
    return ad::sigmoid(g, ad::reshape(g, head_(g, pooled), {B}));
  }

  ParamStore<T>& params() override { return params_; }
  const ParamStore<T>& params() const override { return params_; }
  std::string name() const override { return name_; }
  ModelFamily family() const override { return ModelFamily::lstm; }
  const ConvLSTMConfig& config() const { return config_; }

private:
  ConvLSTMConfig config_;
  std::string name_;
  ParamStore<T> params_;
  std::vector<ad::Conv1dParams<T>> convs_;
  std::vector<ad::RecurrentLayerParams<T>> lstms_;
  ad::DenseParams<T> head_;
};

/// Control model: the recurrent stack sees only short random slices, so any
/// signal that requires relating distant timesteps is unreachable.
template <typename T>
class ShortLSTMModel : public ClassifierModel<T> {
public:
  ShortLSTMModel(ShortLSTMConfig config, uint64_t seed, std::string name = "short-lstm")
      : config_(std::move(config)), name_(std::move(name)) {
    config_.validate();
    RngStream rng = RngStream::derive(seed, 0x5407);
    size_t in = config_.input_channels;
    for (size_t i = 0; i < config_.lstm_layers; ++i) {
      lstms_.push_back(ad::RecurrentLayerParams<T>::create(params_, "lstm" + std::to_string(i),
                                                           ad::RnnCell::lstm, in,
                                                           config_.lstm_units, true, rng));
      in = 2 * config_.lstm_units;
    }
    head_ = ad::DenseParams<T>::create(params_, "head", in, 1, rng);
  }

  Tensor<T> forward(Graph<T>& g, Tensor<T> x,
                    std::vector<AttentionMap<T>>* attention = nullptr) override {
    (void)attention;
    check(x.shape()[1] == config_.slice_len, "short-lstm: expected slices of ",
          config_.slice_len, " steps, got ", x.shape()[1]);
    Tensor<T> h = x;
    for (const auto& lstm : lstms_) h = lstm(g, h);
    size_t B = h.shape()[0];
    Tensor<T> pooled = ad::global_avg_pool(g, h);
    return ad::sigmoid(g, ad::reshape(g, head_(g, pooled), {B}));
  }

  ParamStore<T>& params() override { return params_; }
  const ParamStore<T>& params() const override { return params_; }
  std::string name() const override { return name_; }
  ModelFamily family() const override { return ModelFamily::lstm; }
  size_t slice_len() const override { return config_.slice_len; }
  const ShortLSTMConfig& config() const { return config_; }

private:
  ShortLSTMConfig config_;
  std::string name_;
  ParamStore<T> params_;
  std::vector<ad::RecurrentLayerParams<T>> lstms_;
  ad::DenseParams<T> head_;
};

// ---------------------------------------------------------------------------
// VAE-Conv-GRU
// ---------------------------------------------------------------------------

template <typename T>
struct VAEOutput {
  Tensor<T> reconstruction;  // B×T×C
  Tensor<T> mix_logits;      // B×latent×K
  Tensor<T> mu;
  Tensor<T> logvar;
  Tensor<T> z;  // B×latent
};

template <typename T>
class VAEConvGRUModel {
public:
  VAEConvGRUModel(VAEConvGRUConfig config, uint64_t seed, std::string name = "vae-conv-gru")
      : config_(std::move(config)), name_(std::move(name)) {
    config_.validate();
    RngStream rng = RngStream::derive(seed, 0xae0e);
    size_t in = config_.input_channels;
    size_t idx = 0;
    for (const auto& spec : config_.encoder_convs) {
      enc_convs_.push_back(ad::Conv1dParams<T>::create(params_, "enc.conv" + std::to_string(idx++),
                                                       spec.kernel, in, spec.out_channels,
                                                       spec.stride, rng));
      in = spec.out_channels;
    }
    enc_gru1_ = ad::RecurrentLayerParams<T>::create(params_, "enc.gru1", ad::RnnCell::gru, in,
                                                    config_.gru1_units, true, rng);
    in = 2 * config_.gru1_units;
    enc_mid_conv_ = ad::Conv1dParams<T>::create(params_, "enc.mid", config_.mid_conv.kernel, in,
                                                config_.mid_conv.out_channels,
                                                config_.mid_conv.stride, rng);
    in = config_.mid_conv.out_channels;
    enc_gru2_ = ad::RecurrentLayerParams<T>::create(params_, "enc.gru2", ad::RnnCell::gru, in,
                                                    config_.gru2_units, true, rng);
    in = 2 * config_.gru2_units;
    head_proj_ = ad::DenseParams<T>::create(params_, "enc.proj", in, config_.head_proj, rng);
    size_t head_out = config_.latent_dim * config_.components;
    head_logits_ = ad::DenseParams<T>::create(params_, "enc.mix_logits", config_.head_proj,
                                              head_out, rng);
    head_mu_ = ad::DenseParams<T>::create(params_, "enc.mu", config_.head_proj, head_out, rng);
    head_logvar_ = ad::DenseParams<T>::create(params_, "enc.logvar", config_.head_proj, head_out,
                                              rng);

    dec_seed_ = ad::DenseParams<T>::create(params_, "dec.seed", config_.latent_dim,
                                           config_.seed_dim, rng);
    dec_gru1_ = ad::RecurrentLayerParams<T>::create(params_, "dec.gru1", ad::RnnCell::gru,
                                                    config_.seed_dim, config_.dec_gru1_units, true,
                                                    rng);
    dec_mid_tconv_ = ad::ConvTranspose1dParams<T>::create(
        params_, "dec.mid", config_.dec_mid_tconv.kernel, 2 * config_.dec_gru1_units,
        config_.dec_mid_tconv.out_channels, config_.dec_mid_tconv.stride, rng);
    dec_gru2_ = ad::RecurrentLayerParams<T>::create(params_, "dec.gru2", ad::RnnCell::gru,
                                                    config_.dec_mid_tconv.out_channels,
                                                    config_.dec_gru2_units, true, rng);
    in = 2 * config_.dec_gru2_units;
    idx = 0;
    for (const auto& spec : config_.decoder_tconvs) {
      dec_tconvs_.push_back(ad::ConvTranspose1dParams<T>::create(
          params_, "dec.tconv" + std::to_string(idx++), spec.kernel, in, spec.out_channels,
          spec.stride, rng));
      in = spec.out_channels;
    }
  }

  /// Posterior parameters for a batch: each of mix_logits/mu/logvar is
  /// B×latent_dim×components.
  void encode(Graph<T>& g, Tensor<T> x, Tensor<T>& mix_logits, Tensor<T>& mu,
              Tensor<T>& logvar) {
    check(x.shape().size() == 3 && x.shape()[2] == config_.input_channels,
          "vae: expected B×T×", config_.input_channels, ", got ", shape_str(x.shape()));
    Tensor<T> h = x;
    for (const auto& conv : enc_convs_) h = ad::relu(g, conv(g, h));
    h = enc_gru1_(g, h);
    h = ad::relu(g, enc_mid_conv_(g, h));
    h = enc_gru2_(g, h);
    Tensor<T> pooled = ad::global_avg_pool(g, h);
    Tensor<T> proj = ad::relu(g, head_proj_(g, pooled));
    size_t B = x.shape()[0];
    Shape latent_shape = {B, config_.latent_dim, config_.components};
    mix_logits = ad::reshape(g, head_logits_(g, proj), latent_shape);
    mu = ad::reshape(g, head_mu_(g, proj), latent_shape);
    logvar = ad::reshape(g, head_logvar_(g, proj), latent_shape);
  }

  Tensor<T> decode(Graph<T>& g, Tensor<T> z) {
    Tensor<T> h = ad::broadcast_time(g, z, config_.decoder_len);
    h = ad::relu(g, dec_seed_(g, h));
    h = dec_gru1_(g, h);
    h = ad::relu(g, dec_mid_tconv_(g, h));
    h = dec_gru2_(g, h);
    for (size_t i = 0; i < dec_tconvs_.size(); ++i) {
      h = dec_tconvs_[i](g, h);
      if (i + 1 < dec_tconvs_.size()) h = ad::relu(g, h);  // linear output layer
    }
    return h;
  }

  /// Full pass with per-dimension component sampling and Gaussian
  /// reparameterization; deterministic given the rng state.
  VAEOutput<T> forward(Graph<T>& g, Tensor<T> x, RngStream& rng) {
    check(x.shape()[1] == config_.reconstruction_len(), "vae: input length ", x.shape()[1],
          " != decoder output length ", config_.reconstruction_len());
    VAEOutput<T> out;
    encode(g, x, out.mix_logits, out.mu, out.logvar);
    size_t B = x.shape()[0];
    size_t rows = B * config_.latent_dim;
    size_t K = config_.components;
    std::vector<int> comps(rows);
    std::vector<T> eps(rows);
    for (size_t r = 0; r < rows; ++r) {
      // categorical draw from the softmaxed logits
      const T* lg = out.mix_logits.value().data() + r * K;
      T mx = lg[0];
      for (size_t k = 1; k < K; ++k) mx = std::max(mx, lg[k]);
      double total = 0;
      std::vector<double> w(K);
      for (size_t k = 0; k < K; ++k) {
        w[k] = std::exp(double(lg[k] - mx));
        total += w[k];
      }
      double u = rng.uniform() * total;
      size_t pick = K - 1;
      double acc = 0;
      for (size_t k = 0; k < K; ++k) {
        acc += w[k];
        if (u < acc) {
          pick = k;
          break;
        }
      }
      comps[r] = int(pick);
      eps[r] = T(rng.normal());
    }
    out.z = ad::mixture_reparam(g, out.mix_logits, out.mu, out.logvar, comps, eps);
    out.reconstruction = decode(g, out.z);
    return out;
  }

  /// Per-sample mean squared reconstruction error (the anomaly score).
  std::vector<double> anomaly_scores(Tensor<T> reconstruction, Tensor<T> input) const {
    check(reconstruction.shape() == input.shape(), "anomaly: shape mismatch");
    size_t B = input.shape()[0];
    size_t per = input.size() / B;
    std::vector<double> scores(B, 0.0);
    for (size_t b = 0; b < B; ++b) {
      double total = 0;
      for (size_t i = 0; i < per; ++i) {
        double d = double(reconstruction.value()[b * per + i]) - double(input.value()[b * per + i]);
        total += d * d;
      }
      scores[b] = total / double(per);
    }
    return scores;
  }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  size_t param_count() const { return params_.param_count(); }
  std::string name() const { return name_; }
  const VAEConvGRUConfig& config() const { return config_; }

private:
  VAEConvGRUConfig config_;
  std::string name_;
  ParamStore<T> params_;
  std::vector<ad::Conv1dParams<T>> enc_convs_;
  ad::RecurrentLayerParams<T> enc_gru1_, enc_gru2_;
  ad::Conv1dParams<T> enc_mid_conv_;
  ad::DenseParams<T> head_proj_, head_logits_, head_mu_, head_logvar_;
  ad::DenseParams<T> dec_seed_;
  ad::RecurrentLayerParams<T> dec_gru1_, dec_gru2_;
  ad::ConvTranspose1dParams<T> dec_mid_tconv_;
  std::vector<ad::ConvTranspose1dParams<T>> dec_tconvs_;
};

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& classifier_names() {
  static const std::vector<std::string> names = {
      "conv-mhsa", "conv-lstm", "ex-conv-lstm", "short-lstm",
      "conv-mhsa-small", "conv-lstm-small", "short-lstm-small"};
  return names;
}

template <typename T>
std::unique_ptr<ClassifierModel<T>> build_classifier(const std::string& name, uint64_t seed) {
  if (name == "conv-mhsa")
    return std::make_unique<ConvMHSAModel<T>>(conv_mhsa_default(), seed, name);
  if (name == "conv-mhsa-small")
    return std::make_unique<ConvMHSAModel<T>>(conv_mhsa_small(), seed, name);
  if (name == "conv-lstm")
    return std::make_unique<ConvLSTMModel<T>>(conv_lstm_default(), seed, name);
  if (name == "ex-conv-lstm")
    return std::make_unique<ConvLSTMModel<T>>(ex_conv_lstm_default(), seed, name);
  if (name == "conv-lstm-small")
    return std::make_unique<ConvLSTMModel<T>>(conv_lstm_small(), seed, name);
  if (name == "short-lstm")
    return std::make_unique<ShortLSTMModel<T>>(short_lstm_default(), seed, name);
  if (name == "short-lstm-small")
    return std::make_unique<ShortLSTMModel<T>>(short_lstm_small(), seed, name);
  throw Error(format_msg("unknown classifier model: ", name));
}

inline bool is_vae_name(const std::string& name) {
  return name == "vae-conv-gru" || name == "vae-conv-gru-small";
}

template <typename T>
std::unique_ptr<VAEConvGRUModel<T>> build_vae(const std::string& name, uint64_t seed) {
  if (name == "vae-conv-gru")
    return std::make_unique<VAEConvGRUModel<T>>(vae_conv_gru_default(), seed, name);
  if (name == "vae-conv-gru-small")
    return std::make_unique<VAEConvGRUModel<T>>(vae_conv_gru_small(), seed, name);
  throw Error(format_msg("unknown vae model: ", name));
}

// ---------------------------------------------------------------------------
// Attention export
// ---------------------------------------------------------------------------

/// Writes one CSV matrix per (layer, head) for a single sample plus an
/// index.csv describing the files. Rows are query positions, columns keys.
template <typename T>
std::vector<std::string> attention_export(const std::vector<AttentionMap<T>>& maps,
                                          const std::string& out_dir, size_t sample = 0) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  csv::Writer index((std::filesystem::path(out_dir) / "index.csv").string());
  index.row("layer", "head", "seq_len", "file");
  for (const auto& map : maps) {
    check(sample < map.batch, "attention_export: sample index out of range");
    for (size_t h = 0; h < map.heads; ++h) {
      std::string file = format_msg("attn_l", map.layer, "_h", h, ".csv");
      csv::Writer w((std::filesystem::path(out_dir) / file).string());
      for (size_t q = 0; q < map.seq; ++q) {
        std::ostringstream line;
        line.precision(9);
        for (size_t k = 0; k < map.seq; ++k)
          line << (k ? "," : "") << double(map.at(sample, h, q, k));
        w.row(line.str());
      }
      index.row(map.layer, h, map.seq, file);
      written.push_back(file);
    }
  }
  return written;
}

}  // namespace mtsc::models
