#pragma once

#include <utility>
#include <vector>

#include "grace/encoder.hpp"
#include "grace/graph.hpp"
#include "grace/objective.hpp"
#include "grace/rng.hpp"
#include "grace/views.hpp"

namespace grace {

struct TrainConfig {
  double p_m_1 = 0.0, p_m_2 = 0.0;
  double p_r_1 = 0.0, p_r_2 = 0.0;
  double learning_rate = 0.001;
  double weight_decay = 1e-5;
  int64_t epochs = 200;
  int64_t hidden_dim = 128;
  Activation activation = Activation::ReLU;
  double tau = 0.5;
  uint64_t seed = 0;
  EncoderArch arch = EncoderArch::Gcn2;
  LossConfig::Mode mode = LossConfig::Mode::Grace;

  void validate() const;
};

struct EpochRecord {
  int64_t epoch = 0;
  double objective = 0;       // J for the epoch's views
  double bound_gap = 0;       // NaN when the mode does not define it
  double grad_norm = 0;
  uint64_t seed = 0;
  CorruptionParams view1, view2;
  double wall_ms = 0;
};

struct TrainResult {
  EncoderParams encoder;
  ProjectionParams projection;
  std::vector<EpochRecord> log;
};

/// Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_init(int64_t rows, int64_t cols, StreamRng& rng);

/// Adam with bias correction; weight decay enters as an additive l2 gradient
/// term (classic, not decoupled).
struct Adam {
  double lr = 0.001;
  double weight_decay = 0.0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<Matrix> m, v;

  void init(const std::vector<Matrix*>& params);
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);
};

/// Fresh parameters for the configured architecture: Glorot for weights and
/// skip projections, zeros for biases, 0.25 for PReLU slopes. Deterministic
/// under the config seed.
std::pair<EncoderParams, ProjectionParams> init_params(const TrainConfig& cfg,
                                                       int64_t feature_dim);

/// Full-graph training loop: two fresh views per epoch, one optimizer step
/// per epoch, no minibatching and no early stopping. Deterministic under
/// (seed, thread count). Raises NumericError on a non-finite objective with
/// the offending epoch's view provenance in the message.
TrainResult train(const Graph& g, const TrainConfig& cfg);

}  // namespace grace
