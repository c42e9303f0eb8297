#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>

#include "slotalign/error.hpp"
#include "slotalign/numkernel/graph.hpp"

namespace slotalign::nk {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  bool passed = false;
};

inline constexpr double kFiniteDiffStep = 1e-4;

namespace detail {

inline double finite_or_throw(double v) {
  if (!std::isfinite(v)) throw NumericError("gradient check: function is not finite");
  return v;
}

inline void track(GradCheckResult& r, double analytic, double numeric, std::size_t idx) {
  double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
  if (!std::isfinite(err)) err = HUGE_VAL;
  if (err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_index = idx;
  }
}

}  // namespace detail

// Compares the tape gradient of a scalar function at `point` with central
// differences (step 1e-4). `f` builds the function on the given graph from the
// leaf holding the point and returns the scalar output.
//
// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
template <typename T, typename F>
GradCheckResult check_gradients(F&& f, const Tensor<T>& point, double tol) {
  Tensor<T> analytic;
  {
    Graph<T> g;
    Var x = g.input(point, true);
    Var y = f(g, x);
    detail::finite_or_throw(static_cast<double>(g.value(y)[0]));
    g.backward(y);
    analytic = g.grad(x);
  }
  auto eval = [&](const Tensor<T>& at) {
    Graph<T> g(false, false);
    Var x = g.input(at);
    return detail::finite_or_throw(static_cast<double>(g.value(f(g, x))[0]));
  };
  GradCheckResult r;
  Tensor<T> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + T(kFiniteDiffStep);
    const double up = eval(probe);
    probe[i] = orig - T(kFiniteDiffStep);
    const double down = eval(probe);
    probe[i] = orig;
    detail::track(r, analytic[i], (up - down) / (2 * kFiniteDiffStep), i);
  }
  r.passed = r.max_rel_error < tol;
  return r;
}

// Same check against parameters. `f` must bind every param through
// Graph::param and return the scalar output. Coordinates are indexed in the
// order the params are listed.
template <typename T, typename F>
GradCheckResult check_param_gradients(F&& f, std::span<Param<T>* const> params, double tol,
                                      std::size_t max_coords_per_param = 0) {
  for (Param<T>* p : params) p->zero_grad();
  {
    Graph<T> g;
    Var y = f(g);
    detail::finite_or_throw(static_cast<double>(g.value(y)[0]));
    g.backward(y);
  }
  auto eval = [&] {
    Graph<T> g(false, false);
    return detail::finite_or_throw(static_cast<double>(g.value(f(g))[0]));
  };
  GradCheckResult r;
  std::size_t idx = 0;
  for (Param<T>* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t stride =
        (max_coords_per_param == 0 || n <= max_coords_per_param) ? 1 : n / max_coords_per_param;
    for (std::size_t k = 0; k < n; k += stride, ++idx) {
      const T orig = p->value[k];
      p->value[k] = orig + T(kFiniteDiffStep);
      const double up = eval();
      p->value[k] = orig - T(kFiniteDiffStep);
      const double down = eval();
      p->value[k] = orig;
      detail::track(r, p->grad[k], (up - down) / (2 * kFiniteDiffStep), idx);
    }
  }
  for (Param<T>* p : params) p->zero_grad();
  r.passed = r.max_rel_error < tol;
  return r;
}

}  // namespace slotalign::nk
