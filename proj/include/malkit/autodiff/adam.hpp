#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "malkit/autodiff/tensor.hpp"
#include "malkit/error.hpp"

namespace malkit::ad {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one pair per parameter tensor.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  bool operator==(const AdamState&) const = default;
};

inline AdamState adam_init(const std::vector<Tensor>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

/// One bias-corrected Adam update. Returns new parameter tensors; inputs are
/// left untouched. Parameters whose entry in `active` is false keep their
/// values and moments.
inline std::vector<Tensor> adam_step(const std::vector<Tensor>& params,
                                     const std::vector<Tensor>& grads,
                                     AdamState& state, double lr,
                                     const std::vector<bool>& active = {},
                                     const AdamConfig& cfg = {}) {
  require(params.size() == grads.size() && params.size() == state.m.size() &&
              params.size() == state.v.size(),
          ErrorKind::shape, "adam_step: parameter/gradient/state count mismatch");
  require(active.empty() || active.size() == params.size(), ErrorKind::shape,
          "adam_step: active mask size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || state.m[i].size() != params[i].size() ||
        state.v[i].size() != params[i].size()) {
      fail(ErrorKind::shape, "adam_step: shape mismatch for parameter " +
                                 std::to_string(i) + ": " +
                                 shape_str(params[i].shape()) + " vs grad " +
                                 shape_str(grads[i].shape()));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active.empty() && !active[i]) {
      out.push_back(params[i].detach());
      continue;
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto g = grads[i].values();
    const auto p = params[i].values();
    std::vector<double> next(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      next[j] = p[j] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    out.emplace_back(params[i].shape(), std::move(next));
  }
  return out;
}

}  // namespace malkit::ad
