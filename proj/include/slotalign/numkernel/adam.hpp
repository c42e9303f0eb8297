#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slotalign/error.hpp"
#include "slotalign/numkernel/graph.hpp"

namespace slotalign::nk {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t step_count = 0;
  AdamHyper hyper;

  AdamState() = default;
  AdamState(const Param<T>& p, AdamHyper h)
      : m(p.value.shape()), v(p.value.shape()), hyper(h) {
    validate();
  }

  void validate() const {
    if (!(hyper.beta1 > 0 && hyper.beta1 < 1 && hyper.beta2 > 0 && hyper.beta2 < 1)) {
      throw InvalidInput("adam: betas must lie in (0, 1)");
    }
    if (!(hyper.eps > 0)) throw InvalidInput("adam: eps must be positive");
  }
};

template <typename T>
std::vector<AdamState<T>> make_adam_states(std::span<Param<T>* const> params, AdamHyper h) {
  std::vector<AdamState<T>> states;
  states.reserve(params.size());
  for (const Param<T>* p : params) states.emplace_back(*p, h);
  return states;
}

// One bias-corrected Adam update over every (param, state) pair, followed by
// zeroing the gradients. `lr_scale` multiplies the configured learning rate
// (schedules live with the caller).
template <typename T>
void adam_step(std::span<Param<T>* const> params, std::span<AdamState<T>> states,
               double lr_scale = 1.0) {
  if (params.size() != states.size()) {
    throw InvalidInput("adam_step: " + std::to_string(params.size()) + " params but " +
                       std::to_string(states.size()) + " states");
  }
  if (states.empty()) return;
  const std::uint64_t step = states.front().step_count;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param<T>& p = *params[i];
    const AdamState<T>& s = states[i];
    if (p.grad.shape() != p.value.shape() || s.m.shape() != p.value.shape() ||
        s.v.shape() != p.value.shape()) {
      throw InvalidInput("adam_step: shape mismatch for " + p.name);
    }
    if (s.step_count != step) throw InvalidInput("adam_step: inconsistent step counts");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    AdamState<T>& s = states[i];
    s.step_count += 1;
    const auto& h = s.hyper;
    const double t = static_cast<double>(s.step_count);
    const double bc1 = 1.0 - std::pow(h.beta1, t);
    const double bc2 = 1.0 - std::pow(h.beta2, t);
    const double lr = h.lr * lr_scale;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      const double m = h.beta1 * s.m[k] + (1.0 - h.beta1) * g;
      const double v = h.beta2 * s.v[k] + (1.0 - h.beta2) * g * g;
      s.m[k] = static_cast<T>(m);
      s.v[k] = static_cast<T>(v);
      const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + h.eps);
      p.value[k] = static_cast<T>(p.value[k] - update);
    }
    p.zero_grad();
  }
}

// Rescales all gradients so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Param<T>* const> params, double max_norm) {
  double sq = 0;
  for (const Param<T>* p : params)
    for (T g : p->grad.values()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (Param<T>* p : params)
      for (T& g : p->grad.values()) g *= s;
  }
  return norm;
}

}  // namespace slotalign::nk
