#include "grace/objective.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace grace {

namespace {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

CMap emap(const Matrix& m) { return CMap(m.v.data(), m.rows, m.cols); }
EMap emap(Matrix& m) { return EMap(m.v.data(), m.rows, m.cols); }

Matrix l2_normalize_rows_plain(const Matrix& x) {
  Matrix out(x.rows, x.cols);
  for (int64_t i = 0; i < x.rows; ++i) {
    const real* src = x.row_ptr(i);
    real n2 = 0;
    for (int64_t j = 0; j < x.cols; ++j) n2 += src[j] * src[j];
    if (!(n2 > 0)) {
      throw NumericError("critic: zero-norm projected row " + std::to_string(i) +
                         " (collapsed embedding)");
    }
    const real inv = real(1) / std::sqrt(n2);
    real* dst = out.row_ptr(i);
    for (int64_t j = 0; j < x.cols; ++j) dst[j] = src[j] * inv;
  }
  return out;
}

double logsumexp(const std::vector<double>& xs) {
  double m = xs[0];
  for (double x : xs) m = std::max(m, x);
  double s = 0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

double squared_distance(const Matrix& a, int64_t i, const Matrix& b, int64_t j) {
  const real* x = a.row_ptr(i);
  const real* y = b.row_ptr(j);
  double d = 0;
  for (int64_t k = 0; k < a.cols; ++k) {
    const double t = static_cast<double>(x[k]) - static_cast<double>(y[k]);
    d += t * t;
  }
  return d;
}

/// I_NCE in the temperature-scaled rewriting used by the bound: mean over i
/// of theta_ii/tau - log sum_j exp(theta_ij/tau).
double infonce_term(const CriticMatrix& theta, double tau) {
  const int64_t n = theta.rows;
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) row[static_cast<size_t>(j)] = theta(i, j) / tau;
    acc += theta(i, i) / tau - logsumexp(row);
  }
  return acc / static_cast<double>(n);
}

}  // namespace

LossConfig::Mode loss_mode_from_string(const std::string& s) {
  if (s == "grace") return LossConfig::Mode::Grace;
  if (s == "infonce") return LossConfig::Mode::InfoNce;
  throw ConfigError("unknown objective '" + s + "' (expected grace|infonce)");
}

const char* to_string(LossConfig::Mode m) {
  return m == LossConfig::Mode::Grace ? "grace" : "infonce";
}

Matrix project_plain(const Matrix& e, const ProjectionParams& g) {
  Matrix hidden(e.rows, g.w1.cols);
  emap(hidden) = emap(e) * emap(g.w1);
  for (int64_t i = 0; i < hidden.rows; ++i) {
    real* row = hidden.row_ptr(i);
    for (int64_t j = 0; j < hidden.cols; ++j) {
      real z = row[j] + g.b1.v[static_cast<size_t>(j)];
      row[j] = z > 0 ? z : std::expm1(z);  // ELU hidden nonlinearity
    }
  }
  Matrix out(e.rows, g.w2.cols);
  emap(out) = emap(hidden) * emap(g.w2);
  for (int64_t i = 0; i < out.rows; ++i) {
    real* row = out.row_ptr(i);
    for (int64_t j = 0; j < out.cols; ++j) row[j] += g.b2.v[static_cast<size_t>(j)];
  }
  return out;
}

CriticMatrix critic(const Matrix& u, const Matrix& v, const ProjectionParams& g) {
  require_shape(u.cols == v.cols, "critic: embedding widths disagree");
  Matrix p = l2_normalize_rows_plain(project_plain(u, g));
  Matrix q = l2_normalize_rows_plain(project_plain(v, g));
  Matrix out(u.rows, v.rows);
  emap(out).noalias() = emap(p) * emap(q).transpose();
  return out;
}

CriticMatrix inner_product_critic(const Matrix& a, const Matrix& b) {
  require_shape(a.cols == b.cols, "inner_product_critic: widths disagree");
  Matrix out(a.rows, b.rows);
  emap(out).noalias() = emap(a) * emap(b).transpose();
  return out;
}

double pairwise_loss(int64_t i, const CriticMatrix& theta_uv, const CriticMatrix& theta_uu,
                     double tau) {
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  const int64_t n = theta_uv.rows;
  std::vector<double> terms;
  terms.reserve(static_cast<size_t>(2 * n - 1));
  for (int64_t k = 0; k < n; ++k) terms.push_back(theta_uv(i, k) / tau);  // positive at k == i
  for (int64_t k = 0; k < n; ++k) {
    if (k != i) terms.push_back(theta_uu(i, k) / tau);
  }
  return theta_uv(i, i) / tau - logsumexp(terms);
}

double grace_objective(const Matrix& u, const Matrix& v, const ProjectionParams& g, double tau) {
  require_shape(u.rows == v.rows && u.cols == v.cols, "grace_objective: shapes disagree");
  const CriticMatrix theta_uv = critic(u, v, g);
  const CriticMatrix theta_uu = critic(u, u, g);
  const CriticMatrix theta_vv = critic(v, v, g);
  const int64_t n = u.rows;
  CriticMatrix theta_vu(n, n);  // theta(v_i, u_k) is the transpose of theta_uv
  for (int64_t a = 0; a < n; ++a)
    for (int64_t b = 0; b < n; ++b) theta_vu(a, b) = theta_uv(b, a);
  double acc = 0;
  for (int64_t i = 0; i < n; ++i) {
    acc += pairwise_loss(i, theta_uv, theta_uu, tau);
    acc += pairwise_loss(i, theta_vu, theta_vv, tau);
  }
  return acc / (2.0 * static_cast<double>(n));
}

double infonce_objective(const Matrix& u, const Matrix& v, const ProjectionParams& g, double tau,
                         bool temperature_scaled) {
  require_shape(u.rows == v.rows && u.cols == v.cols, "infonce_objective: shapes disagree");
  const double eff_tau = temperature_scaled ? tau : 1.0;
  if (!(eff_tau > 0)) throw ConfigError("tau must be positive");
  const CriticMatrix theta_uv = critic(u, v, g);
  const int64_t n = u.rows;
  const double log_n = std::log(static_cast<double>(n));
  double lu = 0, lv = 0;
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> row(static_cast<size_t>(n)), col(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
      row[static_cast<size_t>(j)] = theta_uv(i, j) / eff_tau;
      col[static_cast<size_t>(j)] = theta_uv(j, i) / eff_tau;
    }
    // log( e^pos / ((1/N) sum_j e^term) ) = pos - lse + log N
    lu += theta_uv(i, i) / eff_tau - logsumexp(row) + log_n;
    lv += theta_uv(i, i) / eff_tau - logsumexp(col) + log_n;
  }
  return 0.5 * (lu + lv) / static_cast<double>(n);
}

double bound_gap(const Matrix& u, const Matrix& v, const ProjectionParams& g, double tau) {
  const CriticMatrix theta_uv = critic(u, v, g);
  CriticMatrix theta_vu(theta_uv.cols, theta_uv.rows);
  for (int64_t a = 0; a < theta_uv.rows; ++a)
    for (int64_t b = 0; b < theta_uv.cols; ++b) theta_vu(b, a) = theta_uv(a, b);
  return infonce_term(theta_uv, tau) + infonce_term(theta_vu, tau) -
         2.0 * grace_objective(u, v, g, tau);
}

double triplet_surrogate(const Matrix& u, const Matrix& v, int64_t i, double tau) {
  require_shape(u.rows == v.rows && u.cols == v.cols, "triplet_surrogate: shapes disagree");
  const int64_t n = u.rows;
  const double pos = squared_distance(u, i, v, i);
  double acc = 4.0 * static_cast<double>(n) * tau;
  for (int64_t j = 0; j < n; ++j) {
    if (j == i) continue;
    acc += (pos - squared_distance(u, i, v, j)) + (pos - squared_distance(u, i, u, j));
  }
  return acc;
}

namespace {

struct ProjectedPair {
  Tensor p;  // normalized projection of U
  Tensor q;  // normalized projection of V
};

ProjectedPair project_and_normalize(Tape& tape, Tensor u, Tensor v, const StagedParams& staged) {
  ProjectedPair pp;
  pp.p = tape.l2_normalize_rows(project(tape, u, staged));
  pp.q = tape.l2_normalize_rows(project(tape, v, staged));
  return pp;
}

}  // namespace

ContrastiveLoss build_grace_objective(Tape& tape, Tensor u, Tensor v, const StagedParams& staged,
                                      double tau) {
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  require_shape(u.rows() == v.rows() && u.cols() == v.cols(),
                "grace objective: embedding shapes disagree");
  const real inv_tau = real(1) / static_cast<real>(tau);
  const int64_t n = u.rows();

  auto [p, q] = project_and_normalize(tape, u, v, staged);
  Tensor s_uv = tape.scale(tape.matmul(p, tape.transpose(q)), inv_tau);
  Tensor s_uu = tape.mask_diagonal(tape.scale(tape.gram(p), inv_tau), Tape::kMaskFill);
  Tensor s_vv = tape.mask_diagonal(tape.scale(tape.gram(q), inv_tau), Tape::kMaskFill);

  Tensor pos = tape.take_diagonal(s_uv);  // theta(u_i, v_i)/tau = theta(v_i, u_i)/tau
  Tensor lse_inter_u = tape.logsumexp_rows(s_uv);
  Tensor lse_inter_v = tape.logsumexp_rows(tape.transpose(s_uv));
  Tensor den_u = tape.logaddexp(lse_inter_u, tape.logsumexp_rows(s_uu));
  Tensor den_v = tape.logaddexp(lse_inter_v, tape.logsumexp_rows(s_vv));

  Tensor ell = tape.add(tape.sub(pos, den_u), tape.sub(pos, den_v));
  Tensor objective = tape.scale(tape.sum_all(ell), real(1) / static_cast<real>(2 * n));
  return ContrastiveLoss{objective, pos, lse_inter_u, lse_inter_v};
}

ContrastiveLoss build_infonce_objective(Tape& tape, Tensor u, Tensor v, const StagedParams& staged,
                                        double tau, bool temperature_scaled) {
  const double eff_tau = temperature_scaled ? tau : 1.0;
  if (!(eff_tau > 0)) throw ConfigError("tau must be positive");
  require_shape(u.rows() == v.rows() && u.cols() == v.cols(),
                "infonce objective: embedding shapes disagree");
  const real inv_tau = real(1) / static_cast<real>(eff_tau);
  const int64_t n = u.rows();

  auto [p, q] = project_and_normalize(tape, u, v, staged);
  Tensor s_uv = tape.scale(tape.matmul(p, tape.transpose(q)), inv_tau);
  Tensor pos = tape.take_diagonal(s_uv);
  Tensor lse_u = tape.logsumexp_rows(s_uv);
  Tensor lse_v = tape.logsumexp_rows(tape.transpose(s_uv));

  Tensor ell = tape.add(tape.sub(pos, lse_u), tape.sub(pos, lse_v));
  Tensor mean_part = tape.scale(tape.sum_all(ell), real(1) / static_cast<real>(2 * n));
  // The mean denominator contributes a constant +log N per direction.
  Tensor log_n = tape.constant(Matrix::full(1, 1, static_cast<real>(std::log(static_cast<double>(n)))));
  Tensor objective = tape.add(mean_part, log_n);
  return ContrastiveLoss{objective, pos, lse_u, lse_v};
}

double bound_gap_from_parts(double objective, const Matrix& pos_over_tau,
                            const Matrix& lse_inter_u, const Matrix& lse_inter_v) {
  const int64_t n = pos_over_tau.rows;
  double nce_u = 0, nce_v = 0;
  for (int64_t i = 0; i < n; ++i) {
    nce_u += static_cast<double>(pos_over_tau.v[static_cast<size_t>(i)]) -
             static_cast<double>(lse_inter_u.v[static_cast<size_t>(i)]);
    nce_v += static_cast<double>(pos_over_tau.v[static_cast<size_t>(i)]) -
             static_cast<double>(lse_inter_v.v[static_cast<size_t>(i)]);
  }
  nce_u /= static_cast<double>(n);
  nce_v /= static_cast<double>(n);
  return nce_u + nce_v - 2.0 * objective;
}

}  // namespace grace
