#include "grace/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace grace {

Metric metric_from_string(const std::string& s) {
  if (s == "accuracy") return Metric::Accuracy;
  if (s == "micro_f1") return Metric::MicroF1;
  throw ConfigError("unknown metric '" + s + "' (expected accuracy|micro_f1)");
}

const char* to_string(Metric m) { return m == Metric::Accuracy ? "accuracy" : "micro_f1"; }

Standardization compute_standardization(const Matrix& e, const std::vector<int32_t>& idx) {
  if (idx.empty()) throw DataError("standardization: empty index set");
  Standardization s;
  s.mean.assign(static_cast<size_t>(e.cols), 0);
  s.std_dev.assign(static_cast<size_t>(e.cols), 0);
  for (int32_t i : idx) {
    const real* row = e.row_ptr(i);
    for (int64_t j = 0; j < e.cols; ++j) s.mean[static_cast<size_t>(j)] += row[j];
  }
  const real inv_n = real(1) / static_cast<real>(idx.size());
  for (real& m : s.mean) m *= inv_n;
  for (int32_t i : idx) {
    const real* row = e.row_ptr(i);
    for (int64_t j = 0; j < e.cols; ++j) {
      const real d = row[j] - s.mean[static_cast<size_t>(j)];
      s.std_dev[static_cast<size_t>(j)] += d * d;
    }
  }
  for (real& v : s.std_dev) {
    v = std::sqrt(v * inv_n);
    if (!(v > 0)) v = real(1);  // constant dimension: leave it centered only
  }
  return s;
}

Matrix apply_standardization(const Matrix& e, const Standardization& s) {
  Matrix out(e.rows, e.cols);
  for (int64_t i = 0; i < e.rows; ++i) {
    const real* src = e.row_ptr(i);
    real* dst = out.row_ptr(i);
    for (int64_t j = 0; j < e.cols; ++j) {
      dst[j] = (src[j] - s.mean[static_cast<size_t>(j)]) / s.std_dev[static_cast<size_t>(j)];
    }
  }
  return out;
}

namespace {

int64_t count_classes(const std::vector<int32_t>& labels) {
  int32_t mx = -1;
  for (int32_t y : labels) mx = std::max(mx, y);
  return mx + 1;
}

struct LossGrad {
  double loss = 0;
  Matrix dw;
  std::vector<double> db;
};

// Sum of cross-entropies over train rows plus (lambda/2)||W||^2.
LossGrad probe_loss_grad(const Matrix& w, const std::vector<real>& b, const Matrix& e,
                         const std::vector<int32_t>& labels,
                         const std::vector<int32_t>& train_idx, double lambda,
                         bool want_grad) {
  const int64_t c = w.rows;
  const int64_t d = w.cols;
  LossGrad out;
  if (want_grad) {
    out.dw = Matrix::zeros(c, d);
    out.db.assign(static_cast<size_t>(c), 0.0);
  }
  std::vector<double> scores(static_cast<size_t>(c));
  for (int32_t i : train_idx) {
    const real* x = e.row_ptr(i);
    for (int64_t k = 0; k < c; ++k) {
      const real* wk = w.row_ptr(k);
      double s = static_cast<double>(b[static_cast<size_t>(k)]);
      for (int64_t j = 0; j < d; ++j) s += static_cast<double>(wk[j]) * static_cast<double>(x[j]);
      scores[static_cast<size_t>(k)] = s;
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double z = 0;
    for (double s : scores) z += std::exp(s - mx);
    const double log_z = mx + std::log(z);
    const int32_t y = labels[static_cast<size_t>(i)];
    out.loss += log_z - scores[static_cast<size_t>(y)];
    if (want_grad) {
      for (int64_t k = 0; k < c; ++k) {
        const double p = std::exp(scores[static_cast<size_t>(k)] - log_z);
        const double delta = p - (k == y ? 1.0 : 0.0);
        out.db[static_cast<size_t>(k)] += delta;
        real* dwk = out.dw.row_ptr(k);
        for (int64_t j = 0; j < d; ++j) dwk[j] += static_cast<real>(delta * static_cast<double>(x[j]));
      }
    }
  }
  double reg = 0;
  for (real x : w.v) reg += static_cast<double>(x) * static_cast<double>(x);
  out.loss += 0.5 * lambda * reg;
  if (want_grad) {
    for (int64_t i = 0; i < w.size(); ++i) {
      out.dw.v[static_cast<size_t>(i)] += static_cast<real>(lambda) * w.v[static_cast<size_t>(i)];
    }
  }
  return out;
}

}  // namespace

double probe_objective(const ProbeModel& model, const Matrix& e,
                       const std::vector<int32_t>& labels,
                       const std::vector<int32_t>& train_idx) {
  return probe_loss_grad(model.weights, model.bias, e, labels, train_idx, model.lambda, false)
      .loss;
}

ProbeModel fit_probe(const Matrix& e, const std::vector<int32_t>& labels,
                     const std::vector<int32_t>& train_idx, double lambda, uint64_t seed) {
  if (train_idx.empty()) throw DataError("fit_probe: empty training set");
  std::set<int32_t> seen;
  for (int32_t i : train_idx) {
    const int32_t y = labels[static_cast<size_t>(i)];
    if (y < 0) throw DataError("fit_probe: unlabeled node in training set");
    seen.insert(y);
  }
  if (seen.size() < 2) throw DataError("fit_probe: training set contains a single class");

  const int64_t c = count_classes(labels);
  const int64_t d = e.cols;
  ProbeModel model;
  model.lambda = lambda;
  auto rng = StreamRng::substream(seed, 0, 0, RngPurpose::ProbeInit);
  model.weights = Matrix(c, d);
  for (real& x : model.weights.v) x = static_cast<real>(rng.uniform_symmetric(0.01));
  model.bias.assign(static_cast<size_t>(c), real(0));

  constexpr int kMaxIters = 500;
  constexpr double kGradTol = 1e-5;
  constexpr double kArmijo = 1e-4;

  LossGrad lg = probe_loss_grad(model.weights, model.bias, e, labels, train_idx, lambda, true);
  for (int it = 0; it < kMaxIters; ++it) {
    double grad_sq = 0;
    for (real x : lg.dw.v) grad_sq += static_cast<double>(x) * static_cast<double>(x);
    for (double x : lg.db) grad_sq += x * x;
    if (std::sqrt(grad_sq) < kGradTol) break;

    double step = 1.0;
    Matrix w_new;
    std::vector<real> b_new;
    LossGrad lg_new;
    bool accepted = false;
    for (int halving = 0; halving < 60; ++halving) {
      w_new = model.weights;
      b_new = model.bias;
      for (int64_t i = 0; i < w_new.size(); ++i) {
        w_new.v[static_cast<size_t>(i)] -= static_cast<real>(step) * lg.dw.v[static_cast<size_t>(i)];
      }
      for (size_t k = 0; k < b_new.size(); ++k) {
        b_new[k] -= static_cast<real>(step * lg.db[k]);
      }
      lg_new = probe_loss_grad(w_new, b_new, e, labels, train_idx, lambda, true);
      if (lg_new.loss <= lg.loss - kArmijo * step * grad_sq) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // step underflow: gradient is numerically flat
    model.weights = std::move(w_new);
    model.bias = std::move(b_new);
    lg = std::move(lg_new);
  }
  return model;
}

namespace {
int32_t predict_row(const ProbeModel& model, const Matrix& e, int32_t i) {
  const real* x = e.row_ptr(i);
  int32_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int64_t k = 0; k < model.weights.rows; ++k) {
    const real* wk = model.weights.row_ptr(k);
    double s = static_cast<double>(model.bias[static_cast<size_t>(k)]);
    for (int64_t j = 0; j < e.cols; ++j) s += static_cast<double>(wk[j]) * static_cast<double>(x[j]);
    if (s > best_score) {  // strict: ties keep the lowest class id
      best_score = s;
      best = static_cast<int32_t>(k);
    }
  }
  return best;
}
}  // namespace

double micro_f1_from_counts(int64_t tp, int64_t fp, int64_t fn) {
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp) +
                       static_cast<double>(fn);
  if (denom == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / denom;
}

double evaluate_probe(const ProbeModel& model, const Matrix& e,
                      const std::vector<int32_t>& labels, const std::vector<int32_t>& test_idx,
                      Metric metric) {
  if (test_idx.empty()) throw DataError("evaluate: empty test set");
  int64_t correct = 0;
  const int64_t c = model.weights.rows;
  std::vector<int64_t> tp(static_cast<size_t>(c), 0), fp(static_cast<size_t>(c), 0),
      fn(static_cast<size_t>(c), 0);
  for (int32_t i : test_idx) {
    const int32_t pred = predict_row(model, e, i);
    const int32_t truth = labels[static_cast<size_t>(i)];
    if (pred == truth) {
      ++correct;
      ++tp[static_cast<size_t>(truth)];
    } else {
      ++fp[static_cast<size_t>(pred)];
      if (truth >= 0) ++fn[static_cast<size_t>(truth)];
    }
  }
  if (metric == Metric::Accuracy) {
    return static_cast<double>(correct) / static_cast<double>(test_idx.size());
  }
  int64_t tps = 0, fps = 0, fns = 0;
  for (int64_t k = 0; k < c; ++k) {
    tps += tp[static_cast<size_t>(k)];
    fps += fp[static_cast<size_t>(k)];
    fns += fn[static_cast<size_t>(k)];
  }
  return micro_f1_from_counts(tps, fps, fns);
}

EvalReport run_protocol(const Graph& g, const TrainConfig& cfg, const ProtocolOptions& opts) {
  if (opts.n_runs < 1) throw ConfigError("n_runs must be at least 1");
  EvalReport report;
  report.metric = to_string(opts.metric);
  report.n_runs = opts.n_runs;

  for (int r = 0; r < opts.n_runs; ++r) {
    const uint64_t run_seed = cfg.seed + static_cast<uint64_t>(r);

    Matrix embeddings;
    if (opts.raw_features) {
      embeddings = g.features;
    } else {
      TrainConfig run_cfg = cfg;
      run_cfg.seed = run_seed;
      TrainResult tr = train(g, run_cfg);
      const auto adj = cfg.arch == EncoderArch::Gcn2 ? sym_normalize(g) : row_normalize(g);
      embeddings = encode_plain(adj, g.features, tr.encoder, tr.projection);
    }

    SplitSpec split;
    if (opts.fixed_split) {
      split = opts.preset_split ? *opts.preset_split
                                : make_splits(g, opts.train_frac, opts.val_frac, cfg.seed);
    } else {
      split = make_splits(g, opts.train_frac, opts.val_frac, run_seed);
    }

    const Standardization stats = compute_standardization(embeddings, split.train);
    const Matrix e_std = apply_standardization(embeddings, stats);
    const ProbeModel probe = fit_probe(e_std, g.labels, split.train, opts.lambda, run_seed);

    const double acc = evaluate_probe(probe, e_std, g.labels, split.test, Metric::Accuracy);
    const double f1 = evaluate_probe(probe, e_std, g.labels, split.test, Metric::MicroF1);
    // Single-label multiclass: pooled micro-F1 coincides with accuracy.
    if (std::abs(acc - f1) > 1e-12) {
      throw NumericError("micro-F1 does not equal accuracy on a single-label evaluation");
    }
    report.runs.push_back(opts.metric == Metric::Accuracy ? acc : f1);
  }

  double mean = 0;
  for (double x : report.runs) mean += x;
  mean /= static_cast<double>(report.runs.size());
  double var = 0;
  for (double x : report.runs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(report.runs.size());
  report.mean = mean;
  report.std_dev = std::sqrt(var);
  return report;
}

}  // namespace grace
