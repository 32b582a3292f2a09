#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "advsim/random.hpp"
#include "advsim/tensor.hpp"

namespace testutil {

inline advsim::Tensor random_tensor(advsim::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  advsim::Tensor t(std::move(shape));
  advsim::Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// max |a-b| / max(|a|, |b|, floor)
inline double max_rel_error(const advsim::Tensor& a, const advsim::Tensor& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
