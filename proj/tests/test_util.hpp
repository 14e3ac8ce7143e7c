// Copyright 2026 The segshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "segshift/rng.hpp"

namespace segshift::testing {

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

/// Largest relative error between an analytic gradient and central finite
/// differences of f over every entry of x. Entries where both are tiny are
/// compared on an absolute scale `floor`.
inline double fd_relative_error(const std::function<double(const Eigen::MatrixXd&)>& f, Eigen::MatrixXd x,
                                const Eigen::MatrixXd& analytic, double step = 1e-4, double floor = 1e-2) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + step;
      const double hi = f(x);
      x(i, j) = keep - step;
      const double lo = f(x);
      x(i, j) = keep;
      const double numeric = (hi - lo) / (2.0 * step);
      const double a = analytic(i, j);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  return worst;
}

}  // namespace segshift::testing
