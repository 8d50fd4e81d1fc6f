/* Copyright 2026 The fedrec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fedrec/numkit/params.hpp"
#include "fedrec/numkit/rng.hpp"
#include "fedrec/numkit/tape.hpp"

namespace fedrec::numkit {

/// Relative error with denominator max(|a|, |b|, 1e-8).
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {
inline double eval_scalar(const std::function<Var(Tape&, Var)>& f, const Tensor& x) {
  Tape tape(false);
  Var out = f(tape, tape.constant(x));
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw std::domain_error("check_gradients: function value is not finite");
  return v;
}
}  // namespace detail

/// Central differences against tape adjoints for a scalar function of one tensor.
/// Returns the maximum relative error over all coordinates.
inline double check_gradients(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double eps = 1e-5) {
  Tape tape;
  Var in = tape.variable(x);
  Var out = f(tape, in);
  if (out.value().size() != 1) throw ShapeError("check_gradients: function must return a scalar");
  if (!std::isfinite(out.value()[0])) throw std::domain_error("check_gradients: function value is not finite");
  tape.backward(out);
  const Tensor analytic = tape.grad(in);

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = detail::eval_scalar(f, probe);
    probe[i] = orig - eps;
    const double fm = detail::eval_scalar(f, probe);
    probe[i] = orig;
    worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * eps)));
  }
  return worst;
}

/// Per-coordinate outcome of a parameter gradient check.
struct GradientReport {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t over = 0;        // coordinates with relative error above `tol`
  double max_grad_over = 0.0;  // largest max(|analytic|, |numeric|) among those
  double max_abs_over = 0.0;   // largest |analytic − numeric| among those
};

/// Same check for a loss over a ParameterSet. Checks `coords_per_tensor`
/// randomly chosen coordinates of every tensor (all of them when 0).
inline GradientReport parameter_gradient_report(const std::function<Var(Tape&, const Bound&)>& loss,
                                                ParameterSet params, Rng& rng, std::size_t coords_per_tensor = 0,
                                                double eps = 1e-5, double tol = 1e-4) {
  ParameterSet grads;
  {
    Tape tape;
    Bound bound(tape, params);
    Var out = loss(tape, bound);
    if (!std::isfinite(out.value()[0])) throw std::domain_error("check_parameter_gradients: loss is not finite");
    tape.backward(out);
    grads = bound.gradients();
  }
  auto eval = [&]() {
    Tape tape(false);
    Bound bound(tape, params);
    const double v = loss(tape, bound).value()[0];
    if (!std::isfinite(v)) throw std::domain_error("check_parameter_gradients: loss is not finite");
    return v;
  };
  GradientReport r;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = params.value(t);
    std::vector<std::size_t> coords;
    if (coords_per_tensor == 0 || coords_per_tensor >= p.size()) {
      coords.resize(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t k = 0; k < coords_per_tensor; ++k) coords.push_back(rng.uniform_int(0, p.size() - 1));
    }
    for (auto i : coords) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double fp = eval();
      p[i] = orig - eps;
      const double fm = eval();
      p[i] = orig;
      const double a = grads.value(t)[i], n = (fp - fm) / (2.0 * eps);
      const double rel = relative_error(a, n);
      ++r.checked;
      r.max_rel = std::max(r.max_rel, rel);
      if (rel > tol) {
        ++r.over;
        r.max_grad_over = std::max({r.max_grad_over, std::abs(a), std::abs(n)});
        r.max_abs_over = std::max(r.max_abs_over, std::abs(a - n));
      }
    }
  }
  return r;
}

/// Maximum relative error of parameter_gradient_report.
inline double check_parameter_gradients(const std::function<Var(Tape&, const Bound&)>& loss, ParameterSet params,
                                        Rng& rng, std::size_t coords_per_tensor = 0, double eps = 1e-5) {
  return parameter_gradient_report(loss, std::move(params), rng, coords_per_tensor, eps).max_rel;
}

}  // namespace fedrec::numkit
