#pragma once

// Brute-force reference implementations, deliberately written with naive
// loops and direct exponentials so they share no code with the library path
// they check. Only safe for small instances.

#include <cmath>
#include <vector>

#include "grace/encoder.hpp"

namespace oracle {

using grace::Matrix;

inline std::vector<double> project_row(const double* x, int64_t d,
                                       const grace::ProjectionParams& g) {
  const int64_t h = g.w1.cols;
  std::vector<double> hid(static_cast<size_t>(h), 0.0);
  for (int64_t j = 0; j < h; ++j) {
    double s = g.b1(0, j);
    for (int64_t k = 0; k < d; ++k) s += x[k] * g.w1(k, j);
    hid[static_cast<size_t>(j)] = s > 0 ? s : std::exp(s) - 1.0;  // ELU
  }
  const int64_t o = g.w2.cols;
  std::vector<double> out(static_cast<size_t>(o), 0.0);
  for (int64_t j = 0; j < o; ++j) {
    double s = g.b2(0, j);
    for (int64_t k = 0; k < h; ++k) s += hid[static_cast<size_t>(k)] * g.w2(k, j);
    out[static_cast<size_t>(j)] = s;
  }
  return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// theta(u_i, v_j) for all pairs, via per-pair loops.
inline Matrix critic(const Matrix& u, const Matrix& v, const grace::ProjectionParams& g) {
  Matrix theta(u.rows, v.rows);
  std::vector<std::vector<double>> pu, pv;
  for (int64_t i = 0; i < u.rows; ++i) pu.push_back(project_row(u.row_ptr(i), u.cols, g));
  for (int64_t i = 0; i < v.rows; ++i) pv.push_back(project_row(v.row_ptr(i), v.cols, g));
  for (int64_t i = 0; i < u.rows; ++i)
    for (int64_t j = 0; j < v.rows; ++j)
      theta(i, j) = static_cast<grace::real>(cosine(pu[static_cast<size_t>(i)], pv[static_cast<size_t>(j)]));
  return theta;
}

/// Pairwise objective by direct exponentials (no max shift).
inline double pairwise(int64_t i, const Matrix& theta_uv, const Matrix& theta_uu, double tau) {
  const int64_t n = theta_uv.rows;
  double denom = 0;
  for (int64_t k = 0; k < n; ++k) denom += std::exp(theta_uv(i, k) / tau);
  for (int64_t k = 0; k < n; ++k) {
    if (k != i) denom += std::exp(theta_uu(i, k) / tau);
  }
  return std::log(std::exp(theta_uv(i, i) / tau) / denom);
}

inline double grace_objective(const Matrix& u, const Matrix& v, const grace::ProjectionParams& g,
                              double tau) {
  const Matrix theta_uv = oracle::critic(u, v, g);
  const Matrix theta_vu = oracle::critic(v, u, g);
  const Matrix theta_uu = oracle::critic(u, u, g);
  const Matrix theta_vv = oracle::critic(v, v, g);
  const int64_t n = u.rows;
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    acc += oracle::pairwise(i, theta_uv, theta_uu, tau) +
           oracle::pairwise(i, theta_vu, theta_vv, tau);
  }
  return acc / (2.0 * static_cast<double>(n));
}

inline double infonce_objective(const Matrix& u, const Matrix& v,
                                const grace::ProjectionParams& g, double tau) {
  const Matrix theta_uv = oracle::critic(u, v, g);
  const int64_t n = u.rows;
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double du = 0, dv = 0;
    for (int64_t j = 0; j < n; ++j) {
      du += std::exp(theta_uv(i, j) / tau);
      dv += std::exp(theta_uv(j, i) / tau);
    }
    du /= static_cast<double>(n);
    dv /= static_cast<double>(n);
    acc += std::log(std::exp(theta_uv(i, i) / tau) / du);
    acc += std::log(std::exp(theta_uv(i, i) / tau) / dv);
  }
  return 0.5 * acc / static_cast<double>(n);
}

/// The bound-gap penalty recomputed from the rho partition of the
/// denominator: mean_i [log(1 + rho_r(u_i)/rho_c(u_i)) + same for v_i].
inline double rho_penalty(const Matrix& u, const Matrix& v, const grace::ProjectionParams& g,
                          double tau) {
  const Matrix theta_uv = oracle::critic(u, v, g);
  const Matrix theta_uu = oracle::critic(u, u, g);
  const Matrix theta_vv = oracle::critic(v, v, g);
  const int64_t n = u.rows;
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    double rho_c_u = 0, rho_r_u = 0, rho_c_v = 0, rho_r_v = 0;
    for (int64_t j = 0; j < n; ++j) {
      rho_c_u += std::exp(theta_uv(i, j) / tau);
      rho_c_v += std::exp(theta_uv(j, i) / tau);
      if (j != i) {
        rho_r_u += std::exp(theta_uu(i, j) / tau);
        rho_r_v += std::exp(theta_vv(i, j) / tau);
      }
    }
    acc += std::log1p(rho_r_u / rho_c_u) + std::log1p(rho_r_v / rho_c_v);
  }
  return acc / static_cast<double>(n);
}

}  // namespace oracle
