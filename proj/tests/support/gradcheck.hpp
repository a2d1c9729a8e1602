// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "melbench/rng.hpp"
#include "melbench/tensor.hpp"

namespace testsupport {

using melbench::Tensor;

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t probed = 0;
  std::size_t min_probes_per_tensor = 0;
  std::string worst;  // "<tensor index>[<coord>]: analytic vs numeric"
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is ~0 from turning round-off into huge relative errors.
inline double rel_error(double a, double n, double floor = 1e-5) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences on up to `probes` random coordinates of every tensor in
/// `wrt` (all coordinates when the tensor is smaller). `loss` must rebuild the
/// graph from the current tensor values on every call.
inline GradReport check_gradients(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> wrt,
                                  std::size_t probes = 20, double h = 1e-6, std::uint64_t seed = 7) {
  for (auto& t : wrt) t.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : wrt) {
    if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
    else analytic.emplace_back(t.numel(), 0.0);
  }

  GradReport report;
  report.min_probes_per_tensor = static_cast<std::size_t>(-1);
  melbench::Rng rng(seed);
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto data = wrt[ti].mutable_data();
    std::vector<std::size_t> coords(data.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > probes) {
      for (std::size_t i = 0; i < probes; ++i) {
        std::swap(coords[i], coords[i + rng.uniform_int(coords.size() - i)]);
      }
      coords.resize(probes);
    }
    for (std::size_t c : coords) {
      const double saved = data[c];
      double plus, minus;
      {
        melbench::NoGradGuard guard;
        data[c] = saved + h;
        plus = loss().item();
        data[c] = saved - h;
        minus = loss().item();
      }
      data[c] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = rel_error(analytic[ti][c], numeric);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = std::to_string(ti) + "[" + std::to_string(c) + "]: " + std::to_string(analytic[ti][c]) +
                       " vs " + std::to_string(numeric);
      }
      ++report.probed;
    }
    report.min_probes_per_tensor = std::min(report.min_probes_per_tensor, coords.size());
  }
  return report;
}

/// Random tensor with entries U(lo, hi).
inline Tensor<double> random_tensor(melbench::Shape shape, melbench::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace testsupport
