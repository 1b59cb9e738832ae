#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grace/graph.hpp"
#include "grace/trainer.hpp"

namespace grace {

enum class Metric { Accuracy, MicroF1 };
Metric metric_from_string(const std::string& s);
const char* to_string(Metric m);

/// l2-regularized multinomial logistic regression over frozen embeddings.
struct ProbeModel {
  Matrix weights;           // C x D
  std::vector<real> bias;   // C
  double lambda = 1.0;
};

struct EvalReport {
  std::string metric;
  std::vector<double> runs;
  double mean = 0;
  double std_dev = 0;
  int n_runs = 0;
  std::string config_digest;
};

/// Per-dimension z-scoring statistics from the training split.
struct Standardization {
  std::vector<real> mean;
  std::vector<real> std_dev;
};
Standardization compute_standardization(const Matrix& e, const std::vector<int32_t>& idx);
Matrix apply_standardization(const Matrix& e, const Standardization& s);

/// Minimizes sum of multinomial cross-entropy over the training rows plus
/// (lambda/2)||W||^2 (bias unregularized) by full-batch gradient descent with
/// backtracking line search, to gradient norm < 1e-5 or 500 iterations.
/// Deterministic under the seed.
ProbeModel fit_probe(const Matrix& e, const std::vector<int32_t>& labels,
                     const std::vector<int32_t>& train_idx, double lambda, uint64_t seed);

/// Objective value of the probe's convex problem at the given model; exposed
/// so independent solvers can be compared against fit_probe.
double probe_objective(const ProbeModel& model, const Matrix& e,
                       const std::vector<int32_t>& labels,
                       const std::vector<int32_t>& train_idx);

/// Accuracy or micro-averaged F1 on the given index set. Argmax ties break
/// toward the lowest class id.
double evaluate_probe(const ProbeModel& model, const Matrix& e,
                      const std::vector<int32_t>& labels, const std::vector<int32_t>& test_idx,
                      Metric metric);

double micro_f1_from_counts(int64_t tp, int64_t fp, int64_t fn);

struct ProtocolOptions {
  int n_runs = 5;
  double lambda = 1.0;
  double train_frac = 0.1, val_frac = 0.1;
  Metric metric = Metric::Accuracy;
  bool raw_features = false;         // probe the raw X instead of training an encoder
  bool fixed_split = false;          // one split for all runs instead of per-run splits
  std::optional<SplitSpec> preset_split;  // used when fixed_split is set, if present
};

/// The linear evaluation protocol: for each run r, train with seed base+r,
/// embed the uncorrupted graph, z-score on the run's training split, fit the
/// probe, and score the test split. Reports mean and population standard
/// deviation over runs.
EvalReport run_protocol(const Graph& g, const TrainConfig& cfg, const ProtocolOptions& opts);

}  // namespace grace
