#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "grace/graph.hpp"
#include "grace/rng.hpp"

namespace tst {

using grace::Edge;
using grace::Graph;
using grace::Matrix;
using grace::StreamRng;

inline Matrix random_matrix(int64_t rows, int64_t cols, uint64_t seed, double scale = 1.0) {
  StreamRng rng(seed);
  Matrix m(rows, cols);
  for (auto& x : m.v) x = static_cast<grace::real>(rng.uniform_symmetric(scale));
  return m;
}

inline Matrix random_nonneg_matrix(int64_t rows, int64_t cols, uint64_t seed, double scale = 1.0) {
  StreamRng rng(seed);
  Matrix m(rows, cols);
  for (auto& x : m.v) x = static_cast<grace::real>(scale * rng.next_double() + 0.05);
  return m;
}

/// Erdos-Renyi-ish random graph with dense random features and round-robin
/// labels.
inline Graph random_graph(int64_t n, double edge_prob, int64_t feat_dim, uint64_t seed,
                          int32_t n_classes = 3) {
  StreamRng rng(seed);
  std::vector<Edge> edges;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i + 1; j < n; ++j) {
      if (rng.bernoulli(edge_prob)) {
        edges.emplace_back(static_cast<int32_t>(i), static_cast<int32_t>(j));
      }
    }
  }
  Matrix feats = random_matrix(n, feat_dim, seed ^ 0x9E3779B9ULL);
  std::vector<int32_t> labels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = static_cast<int32_t>(i % n_classes);
  return grace::build_graph(n, edges, std::move(feats), std::move(labels));
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i])));
  }
  return worst;
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) return false;
  for (size_t i = 0; i < a.v.size(); ++i) {
    if (a.v[i] != b.v[i]) return false;
  }
  return true;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(xs);
  const auto ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace tst
