#pragma once

#include <vector>

#include "mtsc/nn.hpp"

namespace mtsc::ad {

/// Cosine decay from lr0 down to end_fraction*lr0 across total_steps.
struct CosineSchedule {
  double lr0 = 1e-3;
  double end_fraction = 0.1;
  size_t total_steps = 1;

  double lr(size_t step) const {
    if (total_steps <= 1) return lr0;
    double t = std::min(double(step) / double(total_steps - 1), 1.0);
    double lr_end = end_fraction * lr0;
    return lr_end + 0.5 * (lr0 - lr_end) * (1.0 + std::cos(M_PI * t));
  }
};

/// Bias-corrected Adam over a ParamStore. Moment buffers are keyed by
/// parameter index; the store's layout is fixed after model construction.
template <typename T>
class Adam {
public:
  explicit Adam(ParamStore<T>& params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-7)
      : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params.count());
    v_.resize(params.count());
    for (size_t i = 0; i < params.count(); ++i) {
      m_[i].assign(params.node(i)->value.size(), 0.0);
      v_[i].assign(params.node(i)->value.size(), 0.0);
    }
  }

  size_t step_count() const { return step_; }

  /// Applies one update from the accumulated gradients, then clears them.
  void step(double lr) {
    ++step_;
    double bc1 = 1.0 - std::pow(beta1_, double(step_));
    double bc2 = 1.0 - std::pow(beta2_, double(step_));
    for (size_t i = 0; i < params_->count(); ++i) {
      Node<T>* p = params_->node(i);
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < p->value.size(); ++j) {
        double gj = double(p->grad[j]);
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        p->value[j] -= T(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
    params_->zero_grad();
  }

private:
  ParamStore<T>* params_;
  double beta1_, beta2_, eps_;
  size_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace mtsc::ad
