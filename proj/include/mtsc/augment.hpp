#pragma once

#include <functional>
#include <vector>

#include "mtsc/core.hpp"

namespace mtsc {

/// Stochastic policy for the three temporal augmentations. Defaults follow
/// the training setup: each augmentation fires with 40% probability, cutout
/// and cutmix pick segments of 64..512 steps and each channel with 30%
/// probability, mixup blends with m in [0.6, 0.9] over channels picked with
/// 40% probability.
struct AugmentationPolicy {
  double p_apply = 0.4;
  size_t seg_min = 64;
  size_t seg_max = 512;
  double p_channel_cut = 0.3;
  double m_min = 0.6;
  double m_max = 0.9;
  double p_channel_mix = 0.4;

  void validate() const {
    check(p_apply >= 0 && p_apply <= 1, "policy: p_apply out of [0,1]");
    check(p_channel_cut >= 0 && p_channel_cut <= 1, "policy: p_channel_cut out of [0,1]");
    check(p_channel_mix >= 0 && p_channel_mix <= 1, "policy: p_channel_mix out of [0,1]");
    check(seg_min >= 1 && seg_min <= seg_max, "policy: need 1 <= seg_min <= seg_max");
    check(m_min >= 0 && m_min <= m_max && m_max <= 1, "policy: need 0 <= m_min <= m_max <= 1");
  }
};

/// Record of the draws one pipeline invocation made; used by the statistical
/// tests and the augment-preview output.
struct AugmentationTrace {
  bool cutout_fired = false;
  bool cutmix_fired = false;
  bool mixup_fired = false;
  size_t cutout_len = 0, cutout_t0 = 0;
  std::vector<bool> cutout_channels;
  size_t cutmix_len = 0, cutmix_t0_x = 0, cutmix_t0_donor = 0;
  std::vector<bool> cutmix_channels;
  double mixup_m = 0.0;
  std::vector<bool> mixup_channels;
};

namespace detail {

/// Segment length is drawn uniform inclusive on [seg_min, seg_max], then
/// clipped to the sequence length; the start is uniform over valid positions.
inline std::pair<size_t, size_t> draw_segment(size_t len_rows, const AugmentationPolicy& policy,
                                              RngStream& rng) {
  size_t seg = size_t(rng.uniform_int(int64_t(policy.seg_min), int64_t(policy.seg_max)));
  seg = std::min(seg, len_rows);
  size_t t0 = size_t(rng.uniform_int(0, int64_t(len_rows - seg)));
  return {seg, t0};
}

inline std::vector<bool> draw_channels(size_t channels, double p, RngStream& rng) {
  std::vector<bool> selected(channels);
  for (size_t c = 0; c < channels; ++c) selected[c] = rng.bernoulli(p);
  return selected;
}

}  // namespace detail

/// Zeroes one contiguous time segment on an independently selected channel
/// subset. Draw order: segment length, segment start, then one Bernoulli per
/// channel. Cells outside the selection are bit-identical to the input.
inline Matrix temporal_cutout(const Matrix& x, const AugmentationPolicy& policy, RngStream& rng,
                              AugmentationTrace* trace = nullptr) {
  policy.validate();
  auto [seg, t0] = detail::draw_segment(x.rows, policy, rng);
  auto selected = detail::draw_channels(x.cols, policy.p_channel_cut, rng);
  Matrix out = x;
  for (size_t t = t0; t < t0 + seg; ++t)
    for (size_t c = 0; c < x.cols; ++c)
      if (selected[c]) out.at(t, c) = 0.0f;
  if (trace) {
    trace->cutout_len = seg;
    trace->cutout_t0 = t0;
    trace->cutout_channels = selected;
  }
  return out;
}

/// Replaces a segment of the selected channels with a same-length segment of
/// the donor, positions drawn independently for x and donor. Draw order:
/// segment length, x start, donor start, then channel Bernoullis. The label
/// of x is untouched (the donor may be of any label).
inline Matrix temporal_cutmix(const Matrix& x, const Matrix& donor,
                              const AugmentationPolicy& policy, RngStream& rng,
                              AugmentationTrace* trace = nullptr) {
  policy.validate();
  check(x.same_shape(donor), "temporal_cutmix: shape mismatch (", x.rows, "x", x.cols, " vs ",
        donor.rows, "x", donor.cols, ")");
  size_t seg = size_t(rng.uniform_int(int64_t(policy.seg_min), int64_t(policy.seg_max)));
  seg = std::min(seg, x.rows);
  size_t t0_x = size_t(rng.uniform_int(0, int64_t(x.rows - seg)));
  size_t t0_d = size_t(rng.uniform_int(0, int64_t(x.rows - seg)));
  auto selected = detail::draw_channels(x.cols, policy.p_channel_cut, rng);
  Matrix out = x;
  for (size_t i = 0; i < seg; ++i)
    for (size_t c = 0; c < x.cols; ++c)
      if (selected[c]) out.at(t0_x + i, c) = donor.at(t0_d + i, c);
  if (trace) {
    trace->cutmix_len = seg;
    trace->cutmix_t0_x = t0_x;
    trace->cutmix_t0_donor = t0_d;
    trace->cutmix_channels = selected;
  }
  return out;
}

/// Convex blend out = m·x + (1−m)·donor over ALL timesteps of the selected
/// channels, computed as x + (1−m)(donor − x) so self-donation is exact.
/// Draw order: m, then channel Bernoullis. Unselected channels are
/// bit-identical to x; the label of x is untouched.
inline Matrix temporal_mixup(const Matrix& x, const Matrix& donor,
                             const AugmentationPolicy& policy, RngStream& rng,
                             AugmentationTrace* trace = nullptr) {
  policy.validate();
  check(x.same_shape(donor), "temporal_mixup: shape mismatch");
  double m = rng.uniform(policy.m_min, policy.m_max);
  auto selected = detail::draw_channels(x.cols, policy.p_channel_mix, rng);
  Matrix out = x;
  float one_minus_m = float(1.0 - m);
  for (size_t t = 0; t < x.rows; ++t)
    for (size_t c = 0; c < x.cols; ++c)
      if (selected[c]) out.at(t, c) = x.at(t, c) + one_minus_m * (donor.at(t, c) - x.at(t, c));
  if (trace) {
    trace->mixup_m = m;
    trace->mixup_channels = selected;
  }
  return out;
}

using DonorSampler = std::function<const Matrix&(RngStream&)>;

/// Gates the three augmentations independently at p_apply each and applies
/// them in the fixed order cutout -> cutmix -> mixup. Donors are drawn only
/// when the corresponding gate fires. Deterministic given the rng state.
inline Matrix apply_pipeline(const Matrix& x, const DonorSampler& donor_sampler,
                             const AugmentationPolicy& policy, RngStream& rng,
                             AugmentationTrace* trace = nullptr) {
  policy.validate();
  Matrix out = x;
  bool fire_cutout = rng.bernoulli(policy.p_apply);
  if (fire_cutout) out = temporal_cutout(out, policy, rng, trace);
  bool fire_cutmix = rng.bernoulli(policy.p_apply);
  if (fire_cutmix) {
    const Matrix& donor = donor_sampler(rng);
    out = temporal_cutmix(out, donor, policy, rng, trace);
  }
  bool fire_mixup = rng.bernoulli(policy.p_apply);
  if (fire_mixup) {
    const Matrix& donor = donor_sampler(rng);
    out = temporal_mixup(out, donor, policy, rng, trace);
  }
  if (trace) {
    trace->cutout_fired = fire_cutout;
    trace->cutmix_fired = fire_cutmix;
    trace->mixup_fired = fire_mixup;
  }
  return out;
}

}  // namespace mtsc
