/*
 * Copyright 2026 the mrbc authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cmath>
#include <functional>

#include "mrbc/tensor.hpp"

namespace mrbc {

/// Central-difference gradient of a deterministic scalar function.
/// g_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                                     const Tensor& x, double eps = 1e-5) {
  if (!(eps > 0.0)) throw ContractError("finite_difference_grad: eps must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_difference_grad: non-finite evaluation at coordinate " +
                         std::to_string(i));
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

/// Relative error between analytic and numeric gradients. The denominator
/// floor keeps tiny-magnitude sign errors detectable without blowing up on
/// exact zeros.
inline double rel_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

inline double max_rel_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-4) {
  if (!analytic.same_shape(numeric))
    throw_shape_mismatch("max_rel_error", analytic.shape(), numeric.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, rel_error(analytic[i], numeric[i], floor));
  return worst;
}

}  // namespace mrbc
