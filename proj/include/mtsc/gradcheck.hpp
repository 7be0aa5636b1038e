#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mtsc/ops.hpp"

namespace mtsc::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::string worst_location;
};

/// Numeric input spec for grad_check.
template <typename T>
struct GradInput {
  Shape shape;
  std::vector<T> data;
};

/// Compares analytic gradients against central finite differences on up to
/// `max_coords` randomly chosen coordinates per input. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8). Intended for 64-bit mode (h = 1e-5).
template <typename T>
GradCheckReport grad_check(
    const std::function<Tensor<T>(Graph<T>&, std::vector<Tensor<T>>&)>& op,
    const std::vector<GradInput<T>>& inputs, double tolerance, RngStream& rng,
    size_t max_coords = 64, double h = 1e-5) {
  auto evaluate = [&](const std::vector<GradInput<T>>& points, std::vector<std::vector<T>>* grads) {
    Graph<T> g;
    std::vector<Tensor<T>> xs;
    xs.reserve(points.size());
    for (const auto& p : points) xs.push_back(g.leaf(p.shape, p.data, /*requires_grad=*/true));
    Tensor<T> loss = op(g, xs);
    check(loss.size() == 1, "grad_check: op must return a scalar");
    double value = double(loss.scalar());
    if (grads) {
      backward(loss);
      grads->clear();
      for (auto& x : xs) {
        x.node()->ensure_grad();
        grads->emplace_back(x.node()->grad.begin(), x.node()->grad.end());
      }
    }
    return value;
  };

  GradCheckReport report;
  report.pass = true;

  std::vector<std::vector<T>> analytic;
  double base = evaluate(inputs, &analytic);
  if (!std::isfinite(base)) {
    report.pass = false;
    report.max_rel_err = std::numeric_limits<double>::infinity();
    report.worst_location = "non-finite forward value";
    return report;
  }

  std::vector<GradInput<T>> probe = inputs;
  for (size_t i = 0; i < inputs.size(); ++i) {
    size_t n = inputs[i].data.size();
    std::vector<size_t> coords;
    if (n <= max_coords) {
      coords.resize(n);
      for (size_t j = 0; j < n; ++j) coords[j] = j;
    } else {
      for (size_t j = 0; j < max_coords; ++j) coords.push_back(size_t(rng.uniform_int(0, int64_t(n) - 1)));
    }
    for (size_t j : coords) {
      double a = double(analytic[i][j]);
      if (!std::isfinite(a)) {
        report.pass = false;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        report.worst_location = format_msg("input ", i, " coord ", j, ": non-finite analytic grad");
        return report;
      }
      T saved = probe[i].data[j];
      probe[i].data[j] = saved + T(h);
      double up = evaluate(probe, nullptr);
      probe[i].data[j] = saved - T(h);
      double down = evaluate(probe, nullptr);
      probe[i].data[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.pass = false;
        report.max_rel_err = std::numeric_limits<double>::infinity();
        report.worst_location = format_msg("input ", i, " coord ", j, ": non-finite probe value");
        return report;
      }
      double numeric = (up - down) / (2.0 * h);
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_location =
            format_msg("input ", i, " coord ", j, ": analytic ", a, " numeric ", numeric);
      }
    }
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

/// Convenience: fills an input spec with uniform values in [-1, 1].
template <typename T>
GradInput<T> random_input(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  GradInput<T> in;
  in.shape = std::move(shape);
  in.data.resize(numel(in.shape));
  for (auto& v : in.data) v = T(rng.uniform(lo, hi));
  return in;
}

}  // namespace mtsc::ad
