#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "simulstream/error.hpp"

namespace simulstream {

// Delay record of one hypothesis: g[t-1] packets were read before emitting
// target token t. EOS and the language token are excluded from g and from
// the target length.
struct LatencyInput {
  std::vector<int> g;
  int src_len = 0;

  int tgt_len() const { return static_cast<int>(g.size()); }

  void validate() const {
    if (g.empty()) throw DataError("latency metrics undefined for empty hypothesis");
    if (src_len < 1) throw DataError("latency metrics require src_len >= 1");
    int prev = 1;
    for (int v : g) {
      if (v < 1 || v > src_len)
        throw DataError("latency input: g out of range [1, src_len]");
      if (v < prev) throw DataError("latency input: g must be non-decreasing");
      prev = v;
    }
  }
};

// AL = (1/tau) * sum_{t<=tau} [g(t) - (t-1)/lambda], lambda = |y|/|x|,
// tau = first t with g(t) = |x|. If g never reaches |x| (early EOS), tau
// falls back to |y| and *warned is set.
inline double average_lagging(const LatencyInput& inp, bool* warned = nullptr) {
  inp.validate();
  if (warned != nullptr) *warned = false;
  const int tgt = inp.tgt_len();
  const double lambda = static_cast<double>(tgt) / inp.src_len;
  int tau = 0;
  for (int t = 1; t <= tgt; ++t) {
    if (inp.g[t - 1] == inp.src_len) {
      tau = t;
      break;
    }
  }
  if (tau == 0) {
    tau = tgt;
    if (warned != nullptr) *warned = true;
  }
  double sum = 0.0;
  for (int t = 1; t <= tau; ++t)
    sum += inp.g[t - 1] - (t - 1) / lambda;
  return sum / tau;
}

// AP = sum_t g(t) / (|x| * |y|).
inline double average_proportion(const LatencyInput& inp) {
  inp.validate();
  double sum = 0.0;
  for (int v : inp.g) sum += v;
  return sum / (static_cast<double>(inp.src_len) * inp.tgt_len());
}

// DAL with the monotone correction g'(t) = max(g(t), g'(t-1) + 1/lambda),
// summed over all target tokens.
inline double differentiable_average_lagging(const LatencyInput& inp) {
  inp.validate();
  const int tgt = inp.tgt_len();
  const double lambda = static_cast<double>(tgt) / inp.src_len;
  double g_prev = 0.0;
  double sum = 0.0;
  for (int t = 1; t <= tgt; ++t) {
    double g_corr = (t == 1) ? inp.g[0]
                             : std::max(static_cast<double>(inp.g[t - 1]),
                                        g_prev + 1.0 / lambda);
    sum += g_corr - (t - 1) / lambda;
    g_prev = g_corr;
  }
  return sum / tgt;
}

}  // namespace simulstream
