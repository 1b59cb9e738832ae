#include "doctest.h"

#include <cmath>

#include "grace/objective.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace grace;

namespace {

ProjectionParams random_projection(int64_t dim, uint64_t seed, double scale = 0.7) {
  ProjectionParams g;
  g.w1 = tst::random_matrix(dim, dim, seed, scale);
  g.b1 = tst::random_matrix(1, dim, seed + 1, scale);
  g.w2 = tst::random_matrix(dim, dim, seed + 2, scale);
  g.b2 = tst::random_matrix(1, dim, seed + 3, scale);
  return g;
}

ProjectionParams identity_projection(int64_t dim) {
  ProjectionParams g;
  g.w1 = Matrix::identity(dim);
  g.b1 = Matrix::zeros(1, dim);
  g.w2 = Matrix::identity(dim);
  g.b2 = Matrix::zeros(1, dim);
  return g;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

/// Tape evaluation of either objective for plain (non-staged) params.
double tape_objective(const Matrix& u, const Matrix& v, const ProjectionParams& g, double tau,
                      LossConfig::Mode mode) {
  Tape tape;
  StagedParams sp;
  sp.proj_w1 = tape.leaf(g.w1, false);
  sp.proj_b1 = tape.leaf(g.b1, false);
  sp.proj_w2 = tape.leaf(g.w2, false);
  sp.proj_b2 = tape.leaf(g.b2, false);
  Tensor tu = tape.constant(u);
  Tensor tv = tape.constant(v);
  ContrastiveLoss loss = mode == LossConfig::Mode::Grace
                             ? build_grace_objective(tape, tu, tv, sp, tau)
                             : build_infonce_objective(tape, tu, tv, sp, tau);
  return loss.objective.value().v[0];
}

}  // namespace

TEST_CASE("critic examples") {
  SUBCASE("same inputs through an identity-like head give unit diagonal") {
    Matrix u = tst::random_nonneg_matrix(5, 3, 1);
    auto g = identity_projection(3);
    CriticMatrix theta = critic(u, u, g);
    for (int64_t i = 0; i < 5; ++i) CHECK(theta(i, i) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal projected rows score zero") {
    Matrix u(1, 2), v(1, 2);
    u(0, 0) = 2;
    u(0, 1) = 0;
    v(0, 0) = 0;
    v(0, 1) = 5;
    CriticMatrix theta = critic(u, v, identity_projection(2));
    CHECK(theta(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("random 4x3 matches the brute-force per-pair cosine loop") {
    Matrix u = tst::random_matrix(4, 3, 5);
    Matrix v = tst::random_matrix(4, 3, 6);
    auto g = random_projection(3, 7);
    CriticMatrix ours = critic(u, v, g);
    CriticMatrix want = oracle::critic(u, v, g);
    CHECK(tst::max_abs_diff(ours, want) < 1e-12);
  }
  SUBCASE("entries stay inside the cosine range") {
    Matrix u = tst::random_matrix(6, 4, 8, 3.0);
    Matrix v = tst::random_matrix(6, 4, 9, 3.0);
    CriticMatrix theta = critic(u, v, random_projection(4, 10));
    for (real x : theta.v) {
      CHECK(x <= 1.0 + 1e-12);
      CHECK(x >= -1.0 - 1e-12);
    }
  }
  SUBCASE("collapsed embedding raises") {
    Matrix u = Matrix::zeros(2, 2);
    CHECK_THROWS_AS(critic(u, u, identity_projection(2)), NumericError);
  }
}

TEST_CASE("pairwise loss") {
  SUBCASE("N = 1 is exactly zero") {
    CriticMatrix theta_uv = Matrix::full(1, 1, 0.73);
    CriticMatrix theta_uu = Matrix::full(1, 1, 1.0);
    CHECK(pairwise_loss(0, theta_uv, theta_uu, 0.5) == 0.0);
  }
  SUBCASE("N = 2 with all thetas equal is -log 3") {
    CriticMatrix theta = Matrix::full(2, 2, 1.0);
    for (double tau : {0.25, 0.5, 1.0}) {
      CHECK(pairwise_loss(0, theta, theta, tau) ==
            doctest::Approx(-std::log(3.0)).epsilon(1e-12));
    }
  }
  SUBCASE("random 5-node instance matches naive direct exponentials") {
    Matrix u = tst::random_matrix(5, 4, 11);
    Matrix v = tst::random_matrix(5, 4, 12);
    auto g = random_projection(4, 13);
    CriticMatrix theta_uv = critic(u, v, g);
    CriticMatrix theta_uu = critic(u, u, g);
    for (int64_t i = 0; i < 5; ++i) {
      const double ours = pairwise_loss(i, theta_uv, theta_uu, 0.4);
      const double want = oracle::pairwise(i, theta_uv, theta_uu, 0.4);
      CHECK(rel_err(ours, want) < 1e-10);
    }
  }
  SUBCASE("never positive") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Matrix u = tst::random_matrix(4, 3, 100 + seed);
      Matrix v = tst::random_matrix(4, 3, 200 + seed);
      auto g = random_projection(3, 300 + seed);
      CriticMatrix theta_uv = critic(u, v, g);
      CriticMatrix theta_uu = critic(u, u, g);
      for (int64_t i = 0; i < 4; ++i) CHECK(pairwise_loss(i, theta_uv, theta_uu, 0.5) <= 0.0);
    }
  }
}

TEST_CASE("grace objective") {
  SUBCASE("matches the brute-force oracle") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Matrix u = tst::random_matrix(5, 3, 400 + seed);
      Matrix v = tst::random_matrix(5, 3, 500 + seed);
      auto g = random_projection(3, 600 + seed);
      const double tau = 0.3 + 0.2 * static_cast<double>(seed % 4);
      CHECK(rel_err(grace_objective(u, v, g, tau), oracle::grace_objective(u, v, g, tau)) <
            1e-10);
    }
  }
  SUBCASE("symmetric in U and V") {
    Matrix u = tst::random_matrix(6, 4, 14);
    Matrix v = tst::random_matrix(6, 4, 15);
    auto g = random_projection(4, 16);
    CHECK(grace_objective(u, v, g, 0.5) == doctest::Approx(grace_objective(v, u, g, 0.5)).epsilon(1e-13));
  }
  SUBCASE("N = 1 gives exactly zero") {
    Matrix u = tst::random_matrix(1, 3, 17);
    Matrix v = tst::random_matrix(1, 3, 18);
    CHECK(grace_objective(u, v, random_projection(3, 19), 0.5) == 0.0);
  }
  SUBCASE("never positive") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      Matrix u = tst::random_matrix(5, 3, 700 + seed);
      Matrix v = tst::random_matrix(5, 3, 800 + seed);
      CHECK(grace_objective(u, v, random_projection(3, 900 + seed), 0.5) <= 0.0);
    }
  }
  SUBCASE("scale invariance under an identity head") {
    Matrix u = tst::random_nonneg_matrix(5, 3, 20);
    Matrix v = tst::random_nonneg_matrix(5, 3, 21);
    auto g = identity_projection(3);
    Matrix u3 = u, v3 = v;
    for (auto& x : u3.v) x *= 3;
    for (auto& x : v3.v) x *= 3;
    CHECK(grace_objective(u, v, g, 0.5) ==
          doctest::Approx(grace_objective(u3, v3, g, 0.5)).epsilon(1e-12));
  }
  SUBCASE("tape value agrees with the plain value") {
    Matrix u = tst::random_matrix(6, 4, 22);
    Matrix v = tst::random_matrix(6, 4, 23);
    auto g = random_projection(4, 24);
    CHECK(rel_err(tape_objective(u, v, g, 0.5, LossConfig::Mode::Grace),
                  grace_objective(u, v, g, 0.5)) < 1e-12);
  }
}

TEST_CASE("infonce objective") {
  SUBCASE("N = 1 is zero") {
    Matrix u = tst::random_matrix(1, 3, 25);
    Matrix v = tst::random_matrix(1, 3, 26);
    CHECK(infonce_objective(u, v, random_projection(3, 27), 0.5) ==
          doctest::Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("all equal thetas give zero") {
    // identical rows make every critic value 1
    Matrix u = Matrix::full(4, 2, 0.0);
    Matrix v = Matrix::full(4, 2, 0.0);
    for (int64_t i = 0; i < 4; ++i) {
      u(i, 0) = 1.0;
      v(i, 0) = 1.0;
    }
    CHECK(infonce_objective(u, v, identity_projection(2), 0.5) ==
          doctest::Approx(0.0).epsilon(1e-13));
  }
  SUBCASE("matches the brute-force oracle") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Matrix u = tst::random_matrix(5, 3, 1000 + seed);
      Matrix v = tst::random_matrix(5, 3, 1100 + seed);
      auto g = random_projection(3, 1200 + seed);
      CHECK(rel_err(infonce_objective(u, v, g, 0.45), oracle::infonce_objective(u, v, g, 0.45)) <
            1e-10);
    }
  }
  SUBCASE("no-temperature toggle equals tau = 1") {
    Matrix u = tst::random_matrix(5, 3, 28);
    Matrix v = tst::random_matrix(5, 3, 29);
    auto g = random_projection(3, 30);
    CHECK(infonce_objective(u, v, g, 0.37, false) ==
          doctest::Approx(infonce_objective(u, v, g, 1.0, true)).epsilon(1e-14));
  }
  SUBCASE("tape value agrees with the plain value") {
    Matrix u = tst::random_matrix(6, 4, 31);
    Matrix v = tst::random_matrix(6, 4, 32);
    auto g = random_projection(4, 33);
    CHECK(rel_err(tape_objective(u, v, g, 0.5, LossConfig::Mode::InfoNce),
                  infonce_objective(u, v, g, 0.5)) < 1e-12);
  }
}

TEST_CASE("bound gap: the mutual-information inequality") {
  SUBCASE("nonnegative over random instances") {
    for (uint64_t seed = 0; seed < 50; ++seed) {
      const int64_t n = 2 + static_cast<int64_t>(seed % 7);
      Matrix u = tst::random_matrix(n, 3, 2000 + seed);
      Matrix v = tst::random_matrix(n, 3, 2100 + seed);
      auto g = random_projection(3, 2200 + seed);
      const double tau = 0.15 + 0.1 * static_cast<double>(seed % 10);
      CHECK(bound_gap(u, v, g, tau) >= -1e-12);
    }
  }
  SUBCASE("N = 1 gives exactly zero (no intra-view terms)") {
    Matrix u = tst::random_matrix(1, 3, 34);
    Matrix v = tst::random_matrix(1, 3, 35);
    CHECK(bound_gap(u, v, random_projection(3, 36), 0.5) == doctest::Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("equals the independently recomputed rho penalty") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      const int64_t n = 3 + static_cast<int64_t>(seed % 5);
      Matrix u = tst::random_matrix(n, 4, 2300 + seed);
      Matrix v = tst::random_matrix(n, 4, 2400 + seed);
      auto g = random_projection(4, 2500 + seed);
      const double tau = 0.4;
      CHECK(rel_err(bound_gap(u, v, g, tau), oracle::rho_penalty(u, v, g, tau)) < 1e-10);
    }
  }
  SUBCASE("bound_gap_from_parts matches the direct computation") {
    Matrix u = tst::random_matrix(6, 4, 37);
    Matrix v = tst::random_matrix(6, 4, 38);
    auto g = random_projection(4, 39);
    Tape tape;
    StagedParams sp;
    sp.proj_w1 = tape.leaf(g.w1, false);
    sp.proj_b1 = tape.leaf(g.b1, false);
    sp.proj_w2 = tape.leaf(g.w2, false);
    sp.proj_b2 = tape.leaf(g.b2, false);
    ContrastiveLoss loss =
        build_grace_objective(tape, tape.constant(u), tape.constant(v), sp, 0.5);
    const double from_parts =
        bound_gap_from_parts(loss.objective.value().v[0], loss.pos_over_tau.value(),
                             loss.lse_inter_u.value(), loss.lse_inter_v.value());
    CHECK(rel_err(from_parts, bound_gap(u, v, g, 0.5)) < 1e-10);
  }
}

TEST_CASE("objective gradients pass finite-difference checks") {
  Matrix u0 = tst::random_matrix(5, 3, 40);
  Matrix v0 = tst::random_matrix(5, 3, 41);
  ProjectionParams g = random_projection(3, 42);

  struct Slot {
    const char* name;
    Matrix* target;
  };
  Matrix u = u0, v = v0;
  std::vector<Slot> slots = {{"U", &u},      {"V", &v},      {"w1", &g.w1},
                             {"b1", &g.b1},  {"w2", &g.w2},  {"b2", &g.b2}};
  for (auto mode : {LossConfig::Mode::Grace, LossConfig::Mode::InfoNce}) {
    for (auto& slot : slots) {
      const double err = grad_check(
          [&](Tape& t, Tensor x) {
            StagedParams sp;
            auto pick = [&](Matrix* m, Tensor fallback) {
              return m == slot.target ? x : fallback;
            };
            sp.proj_w1 = pick(&g.w1, t.leaf(g.w1, false));
            sp.proj_b1 = pick(&g.b1, t.leaf(g.b1, false));
            sp.proj_w2 = pick(&g.w2, t.leaf(g.w2, false));
            sp.proj_b2 = pick(&g.b2, t.leaf(g.b2, false));
            Tensor tu = slot.target == &u ? x : t.constant(u);
            Tensor tv = slot.target == &v ? x : t.constant(v);
            ContrastiveLoss l = mode == LossConfig::Mode::Grace
                                    ? build_grace_objective(t, tu, tv, sp, 0.5)
                                    : build_infonce_objective(t, tu, tv, sp, 0.5);
            return l.objective;
          },
          *slot.target);
      INFO("mode=", mode == LossConfig::Mode::Grace ? "grace" : "infonce", " slot=", slot.name);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("triplet surrogate") {
  SUBCASE("identical embeddings give 4 N tau") {
    Matrix u = Matrix::full(5, 3, 0.4);
    CHECK(triplet_surrogate(u, u, 2, 0.7) == doctest::Approx(4 * 5 * 0.7).epsilon(1e-13));
  }
  SUBCASE("N = 1 gives 4 tau") {
    Matrix u = tst::random_matrix(1, 3, 50);
    Matrix v = tst::random_matrix(1, 3, 51);
    CHECK(triplet_surrogate(u, v, 0, 0.3) == doctest::Approx(4 * 0.3).epsilon(1e-13));
  }
  SUBCASE("rank-correlates with the negated pairwise loss in the aligned regime") {
    // identity projection, inner-product critic; positives tightly aligned,
    // negatives spread; 100 instances of increasing positive perturbation.
    const int64_t n = 6, d = 8;
    const double tau = 4.0;
    tst::StreamRng rng(52);
    Matrix u(n, d);
    for (int64_t i = 0; i < n; ++i) {
      double norm2 = 0;
      for (int64_t j = 0; j < d; ++j) {
        u(i, j) = static_cast<real>(rng.uniform_symmetric(1.0));
        norm2 += u(i, j) * u(i, j);
      }
      for (int64_t j = 0; j < d; ++j) u(i, j) /= static_cast<real>(std::sqrt(norm2));
    }
    std::vector<double> neg_loss, surrogate;
    for (int k = 0; k < 100; ++k) {
      const double eps = 0.002 * (k + 1);
      // perturb and renormalize: equal norms keep squared distances and
      // inner products affinely related, which is the regime of the bound
      Matrix v = u;
      for (auto& x : v.v) x += static_cast<real>(rng.uniform_symmetric(eps));
      for (int64_t i = 0; i < n; ++i) {
        double norm2 = 0;
        for (int64_t j = 0; j < d; ++j) norm2 += v(i, j) * v(i, j);
        for (int64_t j = 0; j < d; ++j) v(i, j) /= static_cast<real>(std::sqrt(norm2));
      }
      CriticMatrix theta_uv = inner_product_critic(u, v);
      CriticMatrix theta_uu = inner_product_critic(u, u);
      neg_loss.push_back(-pairwise_loss(0, theta_uv, theta_uu, tau));
      surrogate.push_back(triplet_surrogate(u, v, 0, tau));
    }
    CHECK(tst::spearman(neg_loss, surrogate) > 0.9);
  }
}
