#pragma once

#include "grace/common.hpp"
#include "grace/encoder.hpp"
#include "grace/tape.hpp"

namespace grace {

struct LossConfig {
  enum class Mode { Grace, InfoNce };
  double tau = 0.5;
  Mode mode = Mode::Grace;
  /// When false, the InfoNCE form drops the temperature scaling (the literal
  /// mean-denominator definition).
  bool temperature_scaled = true;
};

LossConfig::Mode loss_mode_from_string(const std::string& s);
const char* to_string(LossConfig::Mode m);

/// N x N matrix of critic values theta(u_i, v_j): cosine similarity of the
/// rows after projection through g. Entries lie in [-1, 1].
using CriticMatrix = Matrix;

// ---- plain (non-differentiating) forms, used for diagnostics and checked
// ---- against brute-force oracles in the tests.

/// Projection head applied without a tape.
Matrix project_plain(const Matrix& e, const ProjectionParams& g);

/// Cosine critic of projected rows. Raises NumericError on a zero-norm
/// projected row (collapsed embedding).
CriticMatrix critic(const Matrix& u, const Matrix& v, const ProjectionParams& g);

/// Raw inner-product critic u_i . v_j (identity projection); the form the
/// triplet surrogate is stated in.
CriticMatrix inner_product_critic(const Matrix& a, const Matrix& b);

/// Pairwise objective for anchor i: positive against inter-view and
/// intra-view negatives, evaluated in log space. Always <= 0.
double pairwise_loss(int64_t i, const CriticMatrix& theta_uv, const CriticMatrix& theta_uu,
                     double tau);

/// Average over all positive pairs in both directions. Always <= 0 and
/// symmetric in (U, V).
double grace_objective(const Matrix& u, const Matrix& v, const ProjectionParams& g, double tau);

/// Symmetrized InfoNCE with mean denominator; temperature-scaled critic by
/// default.
double infonce_objective(const Matrix& u, const Matrix& v, const ProjectionParams& g, double tau,
                         bool temperature_scaled = true);

/// [I_NCE(U,V) + I_NCE(V,U)] - 2J with the temperature-scaled critic; equals
/// the mean of the log(1 + rho_r/rho_c) penalty terms and is never negative.
double bound_gap(const Matrix& u, const Matrix& v, const ProjectionParams& g, double tau);

/// Triplet diagnostic for anchor i under identity projection and
/// inner-product critic: 4*N*tau plus the sum of squared-distance margins
/// against both negative families. Not used for training.
double triplet_surrogate(const Matrix& u, const Matrix& v, int64_t i, double tau);

// ---- tape forms used by the training loop.

/// The objective plus the per-row pieces the trainer logs: positives over
/// tau and the inter-view logsumexp of each direction, from which the
/// mutual-information bound gap follows without extra matrix products.
struct ContrastiveLoss {
  Tensor objective;     // scalar J, to be maximized
  Tensor pos_over_tau;  // N x 1
  Tensor lse_inter_u;   // N x 1
  Tensor lse_inter_v;   // N x 1
};

ContrastiveLoss build_grace_objective(Tape& tape, Tensor u, Tensor v, const StagedParams& staged,
                                      double tau);
ContrastiveLoss build_infonce_objective(Tape& tape, Tensor u, Tensor v, const StagedParams& staged,
                                        double tau, bool temperature_scaled = true);

/// Bound gap recovered from the logged pieces of build_grace_objective.
double bound_gap_from_parts(double objective, const Matrix& pos_over_tau,
                            const Matrix& lse_inter_u, const Matrix& lse_inter_v);

}  // namespace grace
