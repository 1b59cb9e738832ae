#include "grace/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace grace {

void TrainConfig::validate() const {
  for (double p : {p_m_1, p_m_2, p_r_1, p_r_2}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("corruption probabilities must lie in [0,1]");
  }
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (hidden_dim < 1) throw ConfigError("hidden_dim must be at least 1");
  if (!(tau > 0)) throw ConfigError("tau must be positive");
}

Matrix glorot_init(int64_t rows, int64_t cols, StreamRng& rng) {
  if (rows < 1 || cols < 1) throw ShapeError("glorot_init: dimensions must be positive");
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (real& x : m.v) x = static_cast<real>(rng.uniform_symmetric(a));
  return m;
}

void Adam::init(const std::vector<Matrix*>& params) {
  t = 0;
  m.clear();
  v.clear();
  for (const Matrix* p : params) {
    m.push_back(Matrix::zeros(p->rows, p->cols));
    v.push_back(Matrix::zeros(p->rows, p->cols));
  }
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size() || params.size() != m.size()) {
    throw ShapeError("adam_step: parameter/gradient/state counts disagree");
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t k = 0; k < params.size(); ++k) {
    Matrix& theta = *params[k];
    const Matrix& grad = grads[k];
    require_shape(theta.same_shape(grad), "adam_step: gradient shape mismatch");
    Matrix& mk = m[k];
    Matrix& vk = v[k];
    for (int64_t i = 0; i < theta.size(); ++i) {
      const size_t s = static_cast<size_t>(i);
      const double g = static_cast<double>(grad.v[s]) + weight_decay * static_cast<double>(theta.v[s]);
      const double mi = beta1 * static_cast<double>(mk.v[s]) + (1.0 - beta1) * g;
      const double vi = beta2 * static_cast<double>(vk.v[s]) + (1.0 - beta2) * g * g;
      mk.v[s] = static_cast<real>(mi);
      vk.v[s] = static_cast<real>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      theta.v[s] -= static_cast<real>(lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

std::pair<EncoderParams, ProjectionParams> init_params(const TrainConfig& cfg,
                                                       int64_t feature_dim) {
  auto rng = StreamRng::substream(cfg.seed, 0, 0, RngPurpose::ParamInit);
  const int64_t h = cfg.hidden_dim;

  EncoderParams enc;
  enc.arch = cfg.arch;
  enc.activation = cfg.activation;
  if (cfg.arch == EncoderArch::Gcn2) {
    enc.weights.push_back(glorot_init(feature_dim, 2 * h, rng));
    enc.weights.push_back(glorot_init(2 * h, h, rng));
  } else {
    enc.weights.push_back(glorot_init(2 * feature_dim, h, rng));
    enc.weights.push_back(glorot_init(2 * h, h, rng));
    enc.weights.push_back(glorot_init(2 * h, h, rng));
    enc.w_skip = glorot_init(feature_dim, h, rng);
    enc.w_skip2 = glorot_init(feature_dim, h, rng);
  }
  if (cfg.activation == Activation::PReLU) {
    for (size_t i = 0; i < enc.weights.size(); ++i) {
      enc.prelu_slopes.push_back(Matrix::full(1, 1, real(0.25)));
    }
  }

  // Projection biases follow the usual MLP fan-in rule rather than zeros:
  // a nonzero bias keeps the critic defined even when an all-zero feature
  // matrix collapses the embeddings to a constant.
  auto bias_init = [&rng](int64_t fan_in, int64_t n) {
    Matrix b(1, n);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (real& x : b.v) x = static_cast<real>(rng.uniform_symmetric(bound));
    return b;
  };
  ProjectionParams proj;
  proj.w1 = glorot_init(h, h, rng);
  proj.b1 = bias_init(h, h);
  proj.w2 = glorot_init(h, h, rng);
  proj.b2 = bias_init(h, h);
  return {std::move(enc), std::move(proj)};
}

namespace {

std::vector<Tensor> staged_list(const StagedParams& sp, EncoderArch arch) {
  std::vector<Tensor> out;
  for (Tensor t : sp.weights) out.push_back(t);
  for (Tensor t : sp.slopes) out.push_back(t);
  if (arch == EncoderArch::Mp3Residual) {
    out.push_back(sp.w_skip);
    out.push_back(sp.w_skip2);
  }
  out.push_back(sp.proj_w1);
  out.push_back(sp.proj_b1);
  out.push_back(sp.proj_w2);
  out.push_back(sp.proj_b2);
  return out;
}

}  // namespace

TrainResult train(const Graph& g, const TrainConfig& cfg) {
  cfg.validate();
  auto [enc, proj] = init_params(cfg, g.feature_dim());
  std::vector<Matrix*> params = all_parameters(enc, proj);

  Adam adam;
  adam.lr = cfg.learning_rate;
  adam.weight_decay = cfg.weight_decay;
  adam.init(params);

  const auto kind = adjacency_kind(cfg.arch);
  const CorruptionParams cp1{cfg.p_r_1, cfg.p_m_1};
  const CorruptionParams cp2{cfg.p_r_2, cfg.p_m_2};

  // gcn2's first layer runs on the sparse feature path; mask application is
  // a per-view keep vector, so the dense corrupted copies are never built.
  const bool sparse_path = cfg.arch == EncoderArch::Gcn2;
  SparseFeatures sparse_x;
  if (sparse_path) sparse_x = build_sparse_features(g.features);

  TrainResult result;
  result.log.reserve(static_cast<size_t>(cfg.epochs));

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    GraphView view1 =
        generate_view(g, cp1, cfg.seed, static_cast<uint64_t>(epoch), 1, kind, !sparse_path);
    GraphView view2 =
        generate_view(g, cp2, cfg.seed, static_cast<uint64_t>(epoch), 2, kind, !sparse_path);

    double objective = 0;
    double gap = std::numeric_limits<double>::quiet_NaN();
    double grad_sq = 0;
    try {
      Tape tape;
      StagedParams sp = stage_params(tape, enc, proj, true);
      FeatureInput f1, f2;
      if (sparse_path) {
        f1 = FeatureInput::from_sparse(sparse_x, &view1.feature_keep);
        f2 = FeatureInput::from_sparse(sparse_x, &view2.feature_keep);
      } else {
        f1 = FeatureInput::from_dense(tape.constant(std::move(view1.features)));
        f2 = FeatureInput::from_dense(tape.constant(std::move(view2.features)));
      }
      Tensor u = encode(tape, view1.adjacency, f1, enc, sp);
      Tensor v = encode(tape, view2.adjacency, f2, enc, sp);

      ContrastiveLoss loss = cfg.mode == LossConfig::Mode::Grace
                                 ? build_grace_objective(tape, u, v, sp, cfg.tau)
                                 : build_infonce_objective(tape, u, v, sp, cfg.tau);
      objective = static_cast<double>(loss.objective.value().v[0]);
      if (!std::isfinite(objective)) throw NumericError("non-finite objective");

      if (cfg.mode == LossConfig::Mode::Grace) {
        gap = bound_gap_from_parts(objective, loss.pos_over_tau.value(), loss.lse_inter_u.value(),
                                   loss.lse_inter_v.value());
      }

      // Maximize J with a minimizing optimizer: descend on -J.
      Tensor neg = tape.scale(loss.objective, real(-1));
      std::vector<Matrix> grads = tape.backward(neg, staged_list(sp, cfg.arch));

      for (const Matrix& grad : grads) {
        for (real x : grad.v) grad_sq += static_cast<double>(x) * static_cast<double>(x);
      }
      adam.step(params, grads);
    } catch (const NumericError& e) {
      // Attach the epoch's provenance so the failing views can be rebuilt
      // from their substream keys in isolation.
      std::ostringstream msg;
      msg << e.what() << " at epoch " << epoch << " (seed " << cfg.seed
          << "; view1 index=1 p_r=" << cfg.p_r_1 << " p_m=" << cfg.p_m_1
          << "; view2 index=2 p_r=" << cfg.p_r_2 << " p_m=" << cfg.p_m_2 << ")";
      throw NumericError(msg.str());
    }

    const auto t1 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.objective = objective;
    rec.bound_gap = gap;
    rec.grad_norm = std::sqrt(grad_sq);
    rec.seed = cfg.seed;
    rec.view1 = cp1;
    rec.view2 = cp2;
    rec.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    result.log.push_back(rec);
  }

  result.encoder = std::move(enc);
  result.projection = std::move(proj);
  return result;
}

}  // namespace grace
