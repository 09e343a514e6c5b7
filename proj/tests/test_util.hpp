#pragma once

#include "priorforge/rng.hpp"
#include "priorforge/tfm.hpp"

#include <algorithm>
#include <cmath>

namespace testutil {

using namespace priorforge;

// Random normalized inputs with labels in [0, k) (k = 0 means regression).
inline EpisodeInputs random_inputs(Rng& rng, int s, int q, int d, int k) {
  EpisodeInputs in;
  in.x_support.resize(s, d);
  in.x_query.resize(q, d);
  for (Eigen::Index i = 0; i < in.x_support.size(); ++i) in.x_support.data()[i] = rng.normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < in.x_query.size(); ++i) in.x_query.data()[i] = rng.normal(0.0, 1.0);
  in.y_support.resize(s);
  in.y_query.resize(q);
  in.task = k > 0 ? TaskKind::classification(k) : TaskKind::regression();
  for (int i = 0; i < s; ++i) in.y_support(i) = k > 0 ? static_cast<double>(rng.uniform_int(0, k - 1)) : rng.uniform();
  for (int i = 0; i < q; ++i) in.y_query(i) = k > 0 ? static_cast<double>(rng.uniform_int(0, k - 1)) : rng.uniform();
  return in;
}

// Jitters every parameter so zero-initialized biases and unit gains also get
// exercised by gradient checks.
inline void jitter(TfmModel& m, Rng& rng, double scale) {
  for (auto& p : m.params)
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += rng.normal(0.0, scale);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    if (std::isinf(x) && std::isinf(y) && (x > 0) == (y > 0)) continue;
    worst = std::max(worst, std::abs(x - y));
  }
  return worst;
}

}  // namespace testutil
