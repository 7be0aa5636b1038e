#pragma once

#include <chrono>
#include <functional>
#include <iostream>
#include <optional>

#include "mtsc/augment.hpp"
#include "mtsc/checkpoint.hpp"
#include "mtsc/dataset.hpp"
#include "mtsc/metrics.hpp"
#include "mtsc/models.hpp"
#include "mtsc/optim.hpp"

#include <json.hpp>

namespace mtsc::train {

using models::ClassifierModel;
using models::ModelFamily;
using models::VAEConvGRUModel;

inline size_t default_steps_per_epoch(ModelFamily family, bool extended_training = false) {
  switch (family) {
    case ModelFamily::mhsa: return 250;
    case ModelFamily::lstm: return extended_training ? 500 : 250;
    case ModelFamily::vae: return 1000;
  }
  return 250;
}

inline double default_lr0(ModelFamily family) {
  switch (family) {
    case ModelFamily::mhsa: return 1e-5;
    case ModelFamily::lstm: return 2e-5;
    case ModelFamily::vae: return 1e-4;
  }
  return 1e-5;
}

struct TrainConfig {
  size_t epochs = 30;
  size_t batch_size = 32;
  std::optional<size_t> steps_per_epoch;  // unset -> model-family default
  std::optional<double> lr0;              // unset -> model-family default
  double lr_end_fraction = 0.1;           // cosine decay floor
  bool augment = false;
  AugmentationPolicy policy;
  double kld_weight = 1e-3;
  size_t kld_warmup_epochs = 5;
  size_t window_length = kDefaultWindow;
  bool pad_mask = false;  // keep padded rows at zero through normalization
  uint64_t seed = 0;
  bool extended_training = false;  // the "+" runs: 500 steps/epoch for LSTMs

  void validate() const {
    check(epochs >= 1, "train: epochs must be >= 1");
    check(batch_size >= 1, "train: batch_size must be >= 1");
    check(!lr0 || *lr0 > 0, "train: lr0 must be > 0");
    check(window_length >= 1, "train: bad window length");
    policy.validate();
  }
};

// ---------------------------------------------------------------------------
// Sample sources
// ---------------------------------------------------------------------------

struct SampleMeta {
  std::string flight_id;
  std::string tail_id;
  int label = 0;
};

/// Windowed, unnormalized flight access. Disk-backed for real datasets,
/// in-memory for synthetic and fixture data.
class SampleSource {
public:
  virtual ~SampleSource() = default;
  virtual size_t size() const = 0;
  virtual const SampleMeta& meta(size_t i) const = 0;
  virtual Windowed load(size_t i) const = 0;
};

class InMemorySource : public SampleSource {
public:
  InMemorySource(const std::vector<FlightSeries>& flights, size_t window_length) {
    for (const auto& fs : flights) {
      metas_.push_back({fs.flight_id, fs.tail_id, fs.label});
      windows_.push_back(window(fs.values, window_length));
    }
  }

  size_t size() const override { return metas_.size(); }
  const SampleMeta& meta(size_t i) const override { return metas_[i]; }
  Windowed load(size_t i) const override { return windows_[i]; }

  Windowed& mutable_window(size_t i) { return windows_[i]; }

private:
  std::vector<SampleMeta> metas_;
  std::vector<Windowed> windows_;
};

class DiskSource : public SampleSource {
public:
  DiskSource(DatasetManifest manifest, size_t window_length, bool impute_missing = false)
      : manifest_(std::move(manifest)), window_length_(window_length),
        impute_missing_(impute_missing) {
    for (const auto& e : manifest_.entries) metas_.push_back({e.flight_id, e.tail_id, e.label});
  }

  size_t size() const override { return metas_.size(); }
  const SampleMeta& meta(size_t i) const override { return metas_[i]; }
  Windowed load(size_t i) const override {
    FlightSeries fs = load_flight(manifest_, manifest_.entries[i], impute_missing_);
    return window(fs.values, window_length_);
  }

private:
  DatasetManifest manifest_;
  std::vector<SampleMeta> metas_;
  size_t window_length_;
  bool impute_missing_;
};

/// Train/validation index split for one fold of a plan.
struct FoldSplit {
  std::vector<size_t> train;
  std::vector<size_t> val;
};

inline FoldSplit fold_split(const SampleSource& source, const FoldPlan& plan, size_t fold) {
  check(fold < plan.fold_count, "fold ", fold, " out of range");
  FoldSplit split;
  for (size_t i = 0; i < source.size(); ++i) {
    if (plan.fold_of(source.meta(i).flight_id) == fold)
      split.val.push_back(i);
    else
      split.train.push_back(i);
  }
  return split;
}

/// Simple deterministic split for sources without a fold plan (synthetic
/// benchmarks): the last `val_fraction` of tails become validation.
inline FoldSplit tail_holdout_split(const SampleSource& source, double val_fraction) {
  std::vector<std::string> tails;
  for (size_t i = 0; i < source.size(); ++i) {
    const auto& t = source.meta(i).tail_id;
    if (std::find(tails.begin(), tails.end(), t) == tails.end()) tails.push_back(t);
  }
  std::sort(tails.begin(), tails.end());
  size_t val_tails = std::max<size_t>(1, size_t(double(tails.size()) * val_fraction));
  std::vector<std::string> val_set(tails.end() - val_tails, tails.end());
  FoldSplit split;
  for (size_t i = 0; i < source.size(); ++i) {
    const auto& t = source.meta(i).tail_id;
    if (std::find(val_set.begin(), val_set.end(), t) != val_set.end())
      split.val.push_back(i);
    else
      split.train.push_back(i);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EpochRecord {
  size_t epoch = 0;  // 0 is the pre-training evaluation
  double lr = 0;
  double bce = 0;
  double roc_auc = 0;
  double pr_auc = 0;
  double accuracy = 0;
  double step_ms = 0;  // mean wall-clock per optimizer step this epoch
};

struct EvalReport {
  std::string model_id;
  size_t fold = 0;
  std::vector<EpochRecord> epochs;

  size_t best_epoch(double EpochRecord::* field, bool minimize) const {
    check(!epochs.empty(), "report is empty");
    size_t best = 0;
    for (size_t i = 1; i < epochs.size(); ++i) {
      double v = epochs[i].*field, b = epochs[best].*field;
      if (minimize ? v < b : v > b) best = i;
    }
    return best;
  }

  double best_bce() const { return epochs[best_epoch(&EpochRecord::bce, true)].bce; }
  double best_roc() const { return epochs[best_epoch(&EpochRecord::roc_auc, false)].roc_auc; }
  double best_pr() const { return epochs[best_epoch(&EpochRecord::pr_auc, false)].pr_auc; }
  double best_acc() const { return epochs[best_epoch(&EpochRecord::accuracy, false)].accuracy; }
};

inline void write_run_records(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  check(out.good(), "cannot write run records: ", path);
  for (const auto& e : report.epochs) {
    nlohmann::json j = {{"model", report.model_id}, {"fold", report.fold},
                        {"epoch", e.epoch},         {"lr", e.lr},
                        {"loss", e.bce},            {"roc", e.roc_auc},
                        {"pr", e.pr_auc},           {"acc", e.accuracy},
                        {"step_ms", e.step_ms}};
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Helpers shared by the training loops
// ---------------------------------------------------------------------------

namespace detail {

inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= uint64_t(uint8_t(c));
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Per-sample augmentation stream keyed by (seed, flight, epoch, draw slot),
/// so results do not depend on batch assembly order.
inline RngStream sample_stream(uint64_t seed, const std::string& flight_id, size_t epoch,
                               size_t slot) {
  return RngStream::derive(seed, fnv1a(flight_id), (uint64_t(epoch) << 24) | uint64_t(slot));
}

/// Uniform random slice of `slice_len` rows inside the non-padded region.
inline Matrix random_slice(const Windowed& w, size_t slice_len, RngStream& rng) {
  check(w.values.rows >= slice_len, "slice: window shorter than slice length");
  size_t lo = std::min(w.pad_count, w.values.rows - slice_len);
  size_t start = lo + size_t(rng.uniform_int(0, int64_t(w.values.rows - slice_len - lo)));
  Matrix out(slice_len, w.values.cols);
  std::copy(w.values.data.begin() + start * w.values.cols,
            w.values.data.begin() + (start + slice_len) * w.values.cols, out.data.begin());
  return out;
}

inline NormalizationStats fit_fold_normalization(const SampleSource& source,
                                                 const std::vector<size_t>& train_idx) {
  check(!train_idx.empty(), "train fold is empty");
  Windowed probe = source.load(train_idx[0]);
  NormalizationAccumulator acc(probe.values.cols);
  acc.add(probe.values, probe.pad_count);
  for (size_t k = 1; k < train_idx.size(); ++k) {
    Windowed w = source.load(train_idx[k]);
    acc.add(w.values, w.pad_count);
  }
  return acc.finalize();
}

}  // namespace detail

/// Assembles one normalized (optionally augmented / sliced) batch tensor.
template <typename T>
ad::Tensor<T> make_batch(ad::Graph<T>& g, const SampleSource& source,
                         const std::vector<size_t>& indices, const NormalizationStats& stats,
                         const TrainConfig& config, size_t slice_len, bool augmented, size_t epoch,
                         const std::vector<size_t>& donor_pool) {
  size_t B = indices.size();
  std::vector<T> data;
  size_t rows = 0;
  for (size_t slot = 0; slot < B; ++slot) {
    size_t idx = indices[slot];
    Windowed w = source.load(idx);
    std::optional<size_t> mask =
        config.pad_mask ? std::optional<size_t>(w.pad_count) : std::nullopt;
    Matrix m = apply_normalization(w.values, stats, mask);
    RngStream rng = detail::sample_stream(config.seed, source.meta(idx).flight_id, epoch, slot);
    if (augmented) {
      // Donors come from the training pool only, normalized but un-augmented.
      std::vector<Matrix> donor_storage;
      DonorSampler sampler = [&](RngStream& r) -> const Matrix& {
        size_t d = donor_pool[size_t(r.uniform_int(0, int64_t(donor_pool.size()) - 1))];
        Windowed dw = source.load(d);
        std::optional<size_t> dmask =
            config.pad_mask ? std::optional<size_t>(dw.pad_count) : std::nullopt;
        donor_storage.push_back(apply_normalization(dw.values, stats, dmask));
        return donor_storage.back();
      };
      m = apply_pipeline(m, sampler, config.policy, rng);
    }
    if (slice_len > 0) m = detail::random_slice({m, w.pad_count}, slice_len, rng);
    rows = m.rows;
    data.insert(data.end(), m.data.begin(), m.data.end());
  }
  return g.leaf({B, rows, data.size() / (B * rows)}, std::move(data));
}

/// Evaluates a classifier on the given indices; returns per-sample scores.
template <typename T>
std::vector<double> evaluate_scores(ClassifierModel<T>& model, const SampleSource& source,
                                    const std::vector<size_t>& indices,
                                    const NormalizationStats& stats, const TrainConfig& config) {
  std::vector<double> scores;
  scores.reserve(indices.size());
  size_t slice_len = model.slice_len();
  for (size_t begin = 0; begin < indices.size(); begin += config.batch_size) {
    size_t end = std::min(indices.size(), begin + config.batch_size);
    std::vector<T> data;
    size_t rows = 0;
    size_t B = end - begin;
    for (size_t k = begin; k < end; ++k) {
      size_t idx = indices[k];
      Windowed w = source.load(idx);
      std::optional<size_t> mask =
          config.pad_mask ? std::optional<size_t>(w.pad_count) : std::nullopt;
      Matrix m = apply_normalization(w.values, stats, mask);
      if (slice_len > 0) {
        // deterministic evaluation slice per flight
        RngStream rng = detail::sample_stream(config.seed, source.meta(idx).flight_id, 0, 0xe7a1);
        m = detail::random_slice({m, w.pad_count}, slice_len, rng);
      }
      rows = m.rows;
      data.insert(data.end(), m.data.begin(), m.data.end());
    }
    ad::Graph<T> g;
    auto x = g.leaf({B, rows, data.size() / (B * rows)}, std::move(data));
    auto p = model.forward(g, x);
    for (size_t b = 0; b < B; ++b) scores.push_back(double(p.value()[b]));
  }
  return scores;
}

template <typename T>
EpochRecord evaluate_epoch(ClassifierModel<T>& model, const SampleSource& source,
                           const std::vector<size_t>& val_idx, const NormalizationStats& stats,
                           const TrainConfig& config, size_t epoch, double lr, double step_ms) {
  std::vector<double> scores = evaluate_scores(model, source, val_idx, stats, config);
  std::vector<int> labels;
  std::vector<T> labels_t;
  for (size_t idx : val_idx) {
    labels.push_back(source.meta(idx).label);
    labels_t.push_back(T(source.meta(idx).label));
  }
  double bce = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    double p = std::clamp(scores[i], 1e-7, 1.0 - 1e-7);
    bce -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  bce /= double(scores.size());

  EpochRecord rec;
  rec.epoch = epoch;
  rec.lr = lr;
  rec.bce = bce;
  rec.roc_auc = roc_auc(scores, labels);
  rec.pr_auc = pr_auc(scores, labels);
  rec.accuracy = accuracy(scores, labels);
  rec.step_ms = step_ms;
  return rec;
}

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

/// Trains with uniformly-with-replacement batch sampling, augmentation gated
/// by the config, per-epoch evaluation on the full validation fold, and a
/// cosine-decayed Adam schedule. Normalization is fitted on the training
/// fold only. Deterministic given config.seed.
template <typename T>
EvalReport train_classifier(ClassifierModel<T>& model, const SampleSource& source,
                            const std::vector<size_t>& train_idx,
                            const std::vector<size_t>& val_idx, const TrainConfig& config,
                            NormalizationStats* stats_out = nullptr,
                            std::ostream* log = nullptr) {
  config.validate();
  check(!train_idx.empty(), "train: empty training fold");
  check(!val_idx.empty(), "train: empty validation fold");
  {
    bool pos = false, neg = false;
    for (size_t idx : val_idx) (source.meta(idx).label == 1 ? pos : neg) = true;
    check(pos && neg, "train: validation fold must contain both classes");
  }

  size_t steps = config.steps_per_epoch.value_or(
      default_steps_per_epoch(model.family(), config.extended_training));
  double lr0 = config.lr0.value_or(default_lr0(model.family()));
  ad::CosineSchedule schedule{lr0, config.lr_end_fraction,
                              std::max<size_t>(1, config.epochs * steps)};

  NormalizationStats stats = detail::fit_fold_normalization(source, train_idx);
  if (stats_out) *stats_out = stats;

  EvalReport report;
  report.model_id = model.name();
  report.epochs.push_back(
      evaluate_epoch(model, source, val_idx, stats, config, 0, schedule.lr(0), 0.0));
  if (log)
    *log << "epoch 0 (initial) bce " << report.epochs.back().bce << " roc "
         << report.epochs.back().roc_auc << "\n";

  ad::Adam<T> adam(model.params());
  size_t slice_len = model.slice_len();
  size_t global_step = 0;
  if (steps == 0) return report;  // degenerate config: only the initial evaluation

  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_step_ms = 0;
    for (size_t s = 0; s < steps; ++s) {
      RngStream batch_rng = RngStream::derive(config.seed, 0xba7c4, global_step);
      std::vector<size_t> batch(config.batch_size);
      for (auto& b : batch)
        b = train_idx[size_t(batch_rng.uniform_int(0, int64_t(train_idx.size()) - 1))];

      auto start = std::chrono::steady_clock::now();
      ad::Graph<T> g;
      auto x = make_batch(g, source, batch, stats, config, slice_len, config.augment, epoch,
                          train_idx);
      auto p = model.forward(g, x);
      std::vector<T> labels;
      for (size_t idx : batch) labels.push_back(T(source.meta(idx).label));
      auto loss = ad::bce_loss(g, p, labels);
      double loss_v = double(loss.scalar());
      if (!std::isfinite(loss_v)) {
        std::string ids;
        for (size_t idx : batch) ids += source.meta(idx).flight_id + " ";
        throw Error(format_msg("non-finite loss at epoch ", epoch, " step ", s, " lr ",
                               schedule.lr(global_step), " batch: ", ids));
      }
      ad::backward(loss);
      adam.step(schedule.lr(global_step));
      epoch_step_ms += std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - start).count();
      ++global_step;
    }
    report.epochs.push_back(evaluate_epoch(model, source, val_idx, stats, config, epoch,
                                           schedule.lr(global_step - 1),
                                           epoch_step_ms / double(steps)));
    if (log) {
      const auto& e = report.epochs.back();
      *log << "epoch " << epoch << " bce " << e.bce << " roc " << e.roc_auc << " pr " << e.pr_auc
           << " acc " << e.accuracy << " (" << e.step_ms << " ms/step)\n";
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// VAE training
// ---------------------------------------------------------------------------

struct VaeEpochRecord {
  size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;  // mse + weighted kld, mean over the epoch's steps
  double val_mse = 0;
  double kld = 0;
  double step_ms = 0;
};

struct VaeReport {
  std::string model_id;
  size_t fold = 0;
  std::vector<VaeEpochRecord> epochs;

  double final_val_rmse() const {
    check(!epochs.empty(), "vae report is empty");
    return std::sqrt(epochs.back().val_mse);
  }
};

template <typename T>
double vae_validation_mse(VAEConvGRUModel<T>& model, const SampleSource& source,
                          const std::vector<size_t>& indices, const NormalizationStats& stats,
                          const TrainConfig& config) {
  check(!indices.empty(), "vae eval: empty index set");
  double total = 0;
  size_t count = 0;
  for (size_t begin = 0; begin < indices.size(); begin += config.batch_size) {
    size_t end = std::min(indices.size(), begin + config.batch_size);
    std::vector<T> data;
    size_t rows = 0;
    for (size_t k = begin; k < end; ++k) {
      Windowed w = source.load(indices[k]);
      Matrix m = apply_normalization(w.values, stats);
      rows = m.rows;
      data.insert(data.end(), m.data.begin(), m.data.end());
    }
    size_t B = end - begin;
    ad::Graph<T> g;
    auto x = g.leaf({B, rows, data.size() / (B * rows)}, std::move(data));
    RngStream rng = RngStream::derive(config.seed, 0xeva1, begin);
    auto out = model.forward(g, x, rng);
    for (double s : model.anomaly_scores(out.reconstruction, x)) {
      total += s;
      ++count;
    }
  }
  return total / double(count);
}

/// Trains on post-maintenance (label 0) flights only, minimizing
/// reconstruction MSE plus the KLD regularizer with linear warm-up.
template <typename T>
VaeReport train_vae(VAEConvGRUModel<T>& model, const SampleSource& source,
                    const std::vector<size_t>& train_idx, const std::vector<size_t>& val_idx,
                    const TrainConfig& config, NormalizationStats* stats_out = nullptr,
                    std::ostream* log = nullptr) {
  config.validate();
  check(!train_idx.empty(), "train_vae: empty training fold");
  for (size_t idx : train_idx)
    check(source.meta(idx).label == 0, "train_vae: training fold must be post-maintenance only; ",
          source.meta(idx).flight_id, " has label 1");

  size_t steps = config.steps_per_epoch.value_or(default_steps_per_epoch(ModelFamily::vae));
  double lr0 = config.lr0.value_or(default_lr0(ModelFamily::vae));
  ad::CosineSchedule schedule{lr0, config.lr_end_fraction,
                              std::max<size_t>(1, config.epochs * steps)};

  NormalizationStats stats = detail::fit_fold_normalization(source, train_idx);
  if (stats_out) *stats_out = stats;

  VaeReport report;
  report.model_id = model.name();
  {
    VaeEpochRecord rec;
    rec.epoch = 0;
    rec.lr = schedule.lr(0);
    rec.val_mse = vae_validation_mse(model, source, val_idx.empty() ? train_idx : val_idx, stats,
                                     config);
    report.epochs.push_back(rec);
  }

  ad::Adam<T> adam(model.params());
  size_t global_step = 0;
  if (steps == 0) return report;

  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_loss = 0, epoch_kld = 0, epoch_ms = 0;
    double warm = config.kld_warmup_epochs == 0
                      ? 1.0
                      : std::min(1.0, double(epoch) / double(config.kld_warmup_epochs));
    T kld_weight = T(config.kld_weight * warm);
    for (size_t s = 0; s < steps; ++s) {
      RngStream batch_rng = RngStream::derive(config.seed, 0xab5e, global_step);
      std::vector<size_t> batch(config.batch_size);
      for (auto& b : batch)
        b = train_idx[size_t(batch_rng.uniform_int(0, int64_t(train_idx.size()) - 1))];

      auto start = std::chrono::steady_clock::now();
      ad::Graph<T> g;
      std::vector<T> data;
      size_t rows = 0;
      for (size_t idx : batch) {
        Windowed w = source.load(idx);
        Matrix m = apply_normalization(w.values, stats);  // augmentations not used for the VAE
        rows = m.rows;
        data.insert(data.end(), m.data.begin(), m.data.end());
      }
      auto x = g.leaf({batch.size(), rows, data.size() / (batch.size() * rows)}, std::move(data));
      RngStream sample_rng = RngStream::derive(config.seed, 0x5a3e, global_step);
      auto out = model.forward(g, x, sample_rng);
      auto mse = ad::mse_loss(g, out.reconstruction, x);
      auto kld = ad::kld_mixture(g, out.mix_logits, out.mu, out.logvar);
      auto loss = ad::add_scaled(g, mse, kld, kld_weight);
      double loss_v = double(loss.scalar());
      if (!std::isfinite(loss_v))
        throw Error(format_msg("non-finite VAE loss at epoch ", epoch, " step ", s, " lr ",
                               schedule.lr(global_step)));
      ad::backward(loss);
      adam.step(schedule.lr(global_step));
      epoch_loss += loss_v;
      epoch_kld += double(kld.scalar());
      epoch_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                            start).count();
      ++global_step;
    }
    VaeEpochRecord rec;
    rec.epoch = epoch;
    rec.lr = schedule.lr(global_step - 1);
    rec.train_loss = epoch_loss / double(steps);
    rec.kld = epoch_kld / double(steps);
    rec.step_ms = epoch_ms / double(steps);
    rec.val_mse = vae_validation_mse(model, source, val_idx.empty() ? train_idx : val_idx, stats,
                                     config);
    report.epochs.push_back(rec);
    if (log)
      *log << "vae epoch " << epoch << " loss " << rec.train_loss << " val_mse " << rec.val_mse
           << " kld " << rec.kld << "\n";
  }
  return report;
}

/// Anomaly-score evaluation of a trained VAE on a validation fold: ROC/PR
/// over the per-sample reconstruction MSE plus per-class exceedance curves.
struct VaeClassifyResult {
  double roc = 0;
  double pr = 0;
  std::vector<CurvePoint> curve_pre;   // label 1
  std::vector<CurvePoint> curve_post;  // label 0
};

template <typename T>
VaeClassifyResult vae_classify_eval(VAEConvGRUModel<T>& model, const SampleSource& source,
                                    const std::vector<size_t>& val_idx,
                                    const NormalizationStats& stats, const TrainConfig& config) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (size_t begin = 0; begin < val_idx.size(); begin += config.batch_size) {
    size_t end = std::min(val_idx.size(), begin + config.batch_size);
    std::vector<T> data;
    size_t rows = 0;
    for (size_t k = begin; k < end; ++k) {
      Windowed w = source.load(val_idx[k]);
      Matrix m = apply_normalization(w.values, stats);
      rows = m.rows;
      data.insert(data.end(), m.data.begin(), m.data.end());
    }
    size_t B = end - begin;
    ad::Graph<T> g;
    auto x = g.leaf({B, rows, data.size() / (B * rows)}, std::move(data));
    RngStream rng = RngStream::derive(config.seed, 0xc1a5, begin);
    auto out = model.forward(g, x, rng);
    auto batch_scores = model.anomaly_scores(out.reconstruction, x);
    for (size_t b = 0; b < B; ++b) {
      scores.push_back(batch_scores[b]);
      labels.push_back(source.meta(val_idx[begin + b]).label);
    }
  }
  VaeClassifyResult result;
  result.roc = roc_auc(scores, labels);
  result.pr = pr_auc(scores, labels);
  std::vector<double> pre, post;
  for (size_t i = 0; i < scores.size(); ++i)
    (labels[i] == 1 ? pre : post).push_back(scores[i]);
  if (!pre.empty()) result.curve_pre = exceedance_curve(pre);
  if (!post.empty()) result.curve_post = exceedance_curve(post);
  return result;
}

// ---------------------------------------------------------------------------
// Cross validation
// ---------------------------------------------------------------------------

struct FoldBest {
  double bce = 0, roc = 0, pr = 0, acc = 0;
};

struct CVSummary {
  std::vector<FoldBest> folds;
  FoldBest mean;

  static CVSummary from_reports(const std::vector<EvalReport>& reports) {
    check(!reports.empty(), "cross_validate: no fold reports");
    CVSummary summary;
    for (const auto& r : reports) {
      FoldBest b{r.best_bce(), r.best_roc(), r.best_pr(), r.best_acc()};
      summary.mean.bce += b.bce;
      summary.mean.roc += b.roc;
      summary.mean.pr += b.pr;
      summary.mean.acc += b.acc;
      summary.folds.push_back(b);
    }
    double n = double(summary.folds.size());
    summary.mean.bce /= n;
    summary.mean.roc /= n;
    summary.mean.pr /= n;
    summary.mean.acc /= n;
    return summary;
  }

  void save_csv(const std::string& path) const {
    csv::Writer w(path);
    w.row("fold", "best_bce", "best_roc", "best_pr", "best_acc");
    for (size_t f = 0; f < folds.size(); ++f)
      w.row(f, folds[f].bce, folds[f].roc, folds[f].pr, folds[f].acc);
    w.row("mean", mean.bce, mean.roc, mean.pr, mean.acc);
  }
};

/// Per-fold training with per-metric best-epoch selection, then the mean of
/// the per-fold bests (the "mean of the best metrics" reading).
template <typename T>
CVSummary cross_validate(const std::function<std::unique_ptr<ClassifierModel<T>>(uint64_t)>& build,
                         const SampleSource& source, const FoldPlan& plan,
                         const TrainConfig& config,
                         std::vector<EvalReport>* fold_reports = nullptr,
                         std::ostream* log = nullptr) {
  std::vector<EvalReport> reports;
  for (size_t fold = 0; fold < plan.fold_count; ++fold) {
    FoldSplit split = fold_split(source, plan, fold);
    TrainConfig fold_config = config;
    fold_config.seed = RngStream::derive(config.seed, 0xcf01d, fold).next_u64();
    auto model = build(fold_config.seed);
    if (log) *log << "fold " << fold << " train " << split.train.size() << " val "
                  << split.val.size() << "\n";
    EvalReport report =
        train_classifier(*model, source, split.train, split.val, fold_config, nullptr, log);
    report.fold = fold;
    reports.push_back(std::move(report));
  }
  CVSummary summary = CVSummary::from_reports(reports);
  if (fold_reports) *fold_reports = std::move(reports);
  return summary;
}

// ---------------------------------------------------------------------------
// Model bundles (checkpoint + sidecar config with normalization stats)
// ---------------------------------------------------------------------------

struct BundleInfo {
  std::string model_name;
  size_t window_length = kDefaultWindow;
  uint64_t seed = 0;
  NormalizationStats stats;
};

inline void save_bundle(const std::string& dir, const BundleInfo& info,
                        const ad::ParamStore<float>& params) {
  std::filesystem::create_directories(dir);
  save_checkpoint(params, (std::filesystem::path(dir) / "checkpoint.bin").string());
  std::ofstream out((std::filesystem::path(dir) / "model.cfg").c_str());
  check(out.good(), "cannot write bundle sidecar in ", dir);
  out.precision(17);
  out << "model.name = " << info.model_name << "\n";
  out << "dataset.window_length = " << info.window_length << "\n";
  out << "seed = " << info.seed << "\n";
  for (size_t c = 0; c < info.stats.mean.size(); ++c) {
    out << "norm.mean." << c << " = " << info.stats.mean[c] << "\n";
    out << "norm.std." << c << " = " << info.stats.std_dev[c] << "\n";
  }
}

inline BundleInfo load_bundle_info(const std::string& dir) {
  std::ifstream in((std::filesystem::path(dir) / "model.cfg").c_str());
  check(in.good(), "cannot open bundle sidecar in ", dir);
  BundleInfo info;
  std::map<size_t, double> means, stds;
  std::string line;
  while (std::getline(in, line)) {
    size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t");
      size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key == "model.name") {
      info.model_name = value;
    } else if (key == "dataset.window_length") {
      info.window_length = size_t(std::stoull(value));
    } else if (key == "seed") {
      info.seed = std::stoull(value);
    } else if (key.rfind("norm.mean.", 0) == 0) {
      means[std::stoul(key.substr(10))] = std::stod(value);
    } else if (key.rfind("norm.std.", 0) == 0) {
      stds[std::stoul(key.substr(9))] = std::stod(value);
    }
  }
  check(!info.model_name.empty(), "bundle sidecar missing model.name in ", dir);
  check(means.size() == stds.size(), "bundle sidecar has inconsistent normalization stats");
  info.stats.mean.resize(means.size());
  info.stats.std_dev.resize(stds.size());
  for (const auto& [c, v] : means) info.stats.mean.at(c) = v;
  for (const auto& [c, v] : stds) info.stats.std_dev.at(c) = v;
  return info;
}

/// Rebuilds the architecture from the sidecar and loads the checkpoint.
inline std::unique_ptr<ClassifierModel<float>> load_classifier_bundle(const std::string& dir,
                                                                      BundleInfo& info) {
  info = load_bundle_info(dir);
  auto model = models::build_classifier<float>(info.model_name, info.seed);
  load_checkpoint(model->params(), (std::filesystem::path(dir) / "checkpoint.bin").string());
  return model;
}

inline std::unique_ptr<VAEConvGRUModel<float>> load_vae_bundle(const std::string& dir,
                                                               BundleInfo& info) {
  info = load_bundle_info(dir);
  auto model = models::build_vae<float>(info.model_name, info.seed);
  load_checkpoint(model->params(), (std::filesystem::path(dir) / "checkpoint.bin").string());
  return model;
}

}  // namespace mtsc::train
