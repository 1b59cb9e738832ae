#include "grace/gradcheck_suite.hpp"

#include <algorithm>

#include "grace/objective.hpp"
#include "grace/trainer.hpp"
#include "grace/views.hpp"

namespace grace {

namespace {

Matrix rand_mat(int64_t r, int64_t c, uint64_t seed, double scale = 0.8) {
  StreamRng rng(seed);
  Matrix m(r, c);
  for (real& x : m.v) x = static_cast<real>(rng.uniform_symmetric(scale));
  return m;
}

Graph small_graph(int64_t n, uint64_t seed, int64_t feat_dim) {
  StreamRng rng(seed);
  std::vector<Edge> edges;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i + 1; j < n; ++j) {
      if (rng.bernoulli(0.45)) edges.emplace_back(static_cast<int32_t>(i), static_cast<int32_t>(j));
    }
  }
  Matrix feats = rand_mat(n, feat_dim, seed ^ 0xABCDEF);
  std::vector<int32_t> labels(static_cast<size_t>(n), 0);
  return build_graph(n, edges, std::move(feats), std::move(labels));
}

/// Max finite-difference error over every trainable tensor of a full
/// two-view contrastive forward pass.
double check_full_model(EncoderArch arch, Activation act, LossConfig::Mode mode, uint64_t seed) {
  Graph g = small_graph(arch == EncoderArch::Gcn2 ? 8 : 6, seed, 5);
  const auto kind = adjacency_kind(arch);
  GraphView view1 = generate_view(g, {0.3, 0.3}, seed, 1, 1, kind);
  GraphView view2 = generate_view(g, {0.4, 0.2}, seed, 1, 2, kind);

  TrainConfig cfg;
  cfg.arch = arch;
  cfg.activation = act;
  cfg.hidden_dim = 4;
  cfg.seed = seed;
  auto [enc, proj] = init_params(cfg, g.feature_dim());
  std::vector<Matrix*> params = all_parameters(enc, proj);

  double worst = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const double err = grad_check(
        [&, pi](Tape& t, Tensor x) {
          // stage all parameters, substituting the one under test
          StagedParams sp;
          size_t cursor = 0;
          auto stage_one = [&](const Matrix& m) {
            Tensor out = cursor == pi ? x : t.leaf(m, false);
            ++cursor;
            return out;
          };
          for (const Matrix& w : enc.weights) sp.weights.push_back(stage_one(w));
          for (const Matrix& s : enc.prelu_slopes) sp.slopes.push_back(stage_one(s));
          if (arch == EncoderArch::Mp3Residual) {
            sp.w_skip = stage_one(enc.w_skip);
            sp.w_skip2 = stage_one(enc.w_skip2);
          }
          sp.proj_w1 = stage_one(proj.w1);
          sp.proj_b1 = stage_one(proj.b1);
          sp.proj_w2 = stage_one(proj.w2);
          sp.proj_b2 = stage_one(proj.b2);

          Tensor u = encode(t, view1.adjacency, t.constant(view1.features), enc, sp);
          Tensor v = encode(t, view2.adjacency, t.constant(view2.features), enc, sp);
          ContrastiveLoss loss = mode == LossConfig::Mode::Grace
                                     ? build_grace_objective(t, u, v, sp, 0.5)
                                     : build_infonce_objective(t, u, v, sp, 0.5);
          return loss.objective;
        },
        *params[pi]);
    worst = std::max(worst, err);
  }
  return worst;
}

double check_primitives(uint64_t seed) {
  const Matrix theta = rand_mat(4, 3, seed);
  double worst = 0;
  auto acc = [&](const TensorFn& f, const Matrix& at) {
    worst = std::max(worst, grad_check(f, at));
  };
  Matrix other = rand_mat(4, 3, seed + 1);
  Matrix rhs = rand_mat(3, 5, seed + 2);
  acc([&](Tape& t, Tensor x) { return t.sum_all(t.matmul(x, t.constant(rhs))); }, theta);
  acc([&](Tape& t, Tensor x) { return t.sum_all(t.mul(x, t.constant(other))); }, theta);
  acc([&](Tape& t, Tensor x) { return t.sum_all(t.relu(x)); }, theta);
  acc([&](Tape& t, Tensor x) { return t.sum_all(t.elu(x)); }, theta);
  acc([&](Tape& t, Tensor x) { return t.sum_all(t.rrelu(x)); }, theta);
  acc([&](Tape& t, Tensor x) { return t.sum_all(t.exp_op(x)); }, theta);
  acc([&](Tape& t, Tensor x) {
        return t.sum_all(t.mul(t.l2_normalize_rows(x), t.constant(other)));
      },
      theta);
  acc([&](Tape& t, Tensor x) {
        return t.sum_all(t.mul(t.logsumexp_rows(x), t.constant(rand_mat(4, 1, seed + 3))));
      },
      theta);
  acc([&](Tape& t, Tensor x) { return t.sum_all(t.logaddexp(x, t.constant(other))); }, theta);
  Matrix square = rand_mat(4, 4, seed + 4);
  acc([&](Tape& t, Tensor x) {
        return t.sum_all(t.mul(t.gram(x), t.constant(rand_mat(4, 4, seed + 5))));
      },
      theta);
  acc([&](Tape& t, Tensor x) { return t.sum_all(t.take_diagonal(t.mul(x, x))); }, square);
  acc([&](Tape& t, Tensor x) {
        return t.sum_all(t.mask_diagonal(t.mul(x, x), real(-3)));
      },
      square);
  return worst;
}

double check_spmm(uint64_t seed) {
  Graph g = small_graph(7, seed, 3);
  auto sym = sym_normalize(g);
  auto row = row_normalize(g);
  const Matrix theta = rand_mat(7, 3, seed + 9);
  const Matrix weights = rand_mat(7, 3, seed + 10);
  double worst = 0;
  worst = std::max(worst, grad_check(
                              [&](Tape& t, Tensor x) {
                                return t.sum_all(t.mul(t.spmm(sym, x), t.constant(weights)));
                              },
                              theta));
  worst = std::max(worst, grad_check(
                              [&](Tape& t, Tensor x) {
                                return t.sum_all(t.mul(t.spmm(row, x), t.constant(weights)));
                              },
                              theta));
  return worst;
}

double check_feature_matmul(uint64_t seed) {
  Matrix x = rand_mat(6, 8, seed);
  for (size_t i = 0; i < x.v.size(); i += 2) x.v[i] = 0;
  auto sf = build_sparse_features(x);
  std::vector<uint8_t> keep(8, 1);
  keep[2] = keep[5] = 0;
  const Matrix w0 = rand_mat(8, 4, seed + 1);
  const Matrix weights = rand_mat(6, 4, seed + 2);
  return grad_check(
      [&](Tape& t, Tensor w) {
        return t.sum_all(t.mul(t.feature_matmul(sf, w, &keep), t.constant(weights)));
      },
      w0);
}

double check_projection(uint64_t seed) {
  const Matrix e = rand_mat(6, 4, seed);
  ProjectionParams g;
  g.w1 = rand_mat(4, 4, seed + 1);
  g.b1 = rand_mat(1, 4, seed + 2);
  g.w2 = rand_mat(4, 4, seed + 3);
  g.b2 = rand_mat(1, 4, seed + 4);
  std::vector<Matrix*> params = {&g.w1, &g.b1, &g.w2, &g.b2};
  double worst = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    worst = std::max(
        worst, grad_check(
                   [&, pi](Tape& t, Tensor x) {
                     StagedParams sp;
                     sp.proj_w1 = pi == 0 ? x : t.leaf(g.w1, false);
                     sp.proj_b1 = pi == 1 ? x : t.leaf(g.b1, false);
                     sp.proj_w2 = pi == 2 ? x : t.leaf(g.w2, false);
                     sp.proj_b2 = pi == 3 ? x : t.leaf(g.b2, false);
                     return t.sum_all(t.mul(project(t, t.constant(e), sp),
                                            t.constant(rand_mat(6, 4, seed + 5))));
                   },
                   *params[pi]));
  }
  return worst;
}

double check_objective_wrt_embeddings(LossConfig::Mode mode, uint64_t seed) {
  const Matrix u0 = rand_mat(6, 4, seed);
  const Matrix v0 = rand_mat(6, 4, seed + 1);
  ProjectionParams g;
  g.w1 = rand_mat(4, 4, seed + 2);
  g.b1 = rand_mat(1, 4, seed + 3);
  g.w2 = rand_mat(4, 4, seed + 4);
  g.b2 = rand_mat(1, 4, seed + 5);
  auto loss_for = [&](Tape& t, Tensor tu, Tensor tv) {
    StagedParams sp;
    sp.proj_w1 = t.leaf(g.w1, false);
    sp.proj_b1 = t.leaf(g.b1, false);
    sp.proj_w2 = t.leaf(g.w2, false);
    sp.proj_b2 = t.leaf(g.b2, false);
    ContrastiveLoss l = mode == LossConfig::Mode::Grace
                            ? build_grace_objective(t, tu, tv, sp, 0.4)
                            : build_infonce_objective(t, tu, tv, sp, 0.4);
    return l.objective;
  };
  double worst = grad_check(
      [&](Tape& t, Tensor x) { return loss_for(t, x, t.constant(v0)); }, u0);
  worst = std::max(worst, grad_check(
                              [&](Tape& t, Tensor x) { return loss_for(t, t.constant(u0), x); },
                              v0));
  return worst;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite() {
  std::vector<GradCheckEntry> out;
  auto add = [&](const std::string& name, double err, double tol) {
    out.push_back({name, err, tol, err < tol});
  };
  add("ndiff primitives", check_primitives(101), 1e-6);
  add("spmm (symmetric + row)", check_spmm(102), 1e-6);
  add("masked feature product", check_feature_matmul(103), 1e-6);
  add("projection head", check_projection(104), 1e-5);
  add("grace objective wrt embeddings", check_objective_wrt_embeddings(LossConfig::Mode::Grace, 105),
      1e-4);
  add("infonce objective wrt embeddings",
      check_objective_wrt_embeddings(LossConfig::Mode::InfoNce, 106), 1e-4);
  add("gcn2 + grace, relu", check_full_model(EncoderArch::Gcn2, Activation::ReLU,
                                             LossConfig::Mode::Grace, 107),
      1e-4);
  add("gcn2 + grace, prelu", check_full_model(EncoderArch::Gcn2, Activation::PReLU,
                                              LossConfig::Mode::Grace, 108),
      1e-4);
  add("gcn2 + infonce, elu", check_full_model(EncoderArch::Gcn2, Activation::ELU,
                                              LossConfig::Mode::InfoNce, 109),
      1e-4);
  add("mp3 + skips + grace, elu", check_full_model(EncoderArch::Mp3Residual, Activation::ELU,
                                                   LossConfig::Mode::Grace, 110),
      1e-4);
  add("mp3 + skips + grace, rrelu", check_full_model(EncoderArch::Mp3Residual, Activation::RReLU,
                                                     LossConfig::Mode::Grace, 111),
      1e-4);
  return out;
}

}  // namespace grace
