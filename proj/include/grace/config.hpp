#pragma once

#include <filesystem>
#include <string>

#include "grace/evaluation.hpp"
#include "grace/trainer.hpp"

namespace grace {

/// Flat key-value experiment configuration. Keys follow the hyperparameter
/// table naming (p_m_1, p_m_2, p_r_1, p_r_2, learning_rate, weight_decay,
/// epochs, hidden_dim, activation) plus tau, seed and arch; optional keys
/// cover the objective variant, dataset/output paths, run count and metric.
/// Unknown keys are rejected.
struct ExperimentConfig {
  double p_m_1 = 0, p_m_2 = 0, p_r_1 = 0, p_r_2 = 0;
  double learning_rate = 0;
  double weight_decay = 0;
  int64_t epochs = 0;
  int64_t hidden_dim = 0;
  std::string activation;
  double tau = 0.5;
  uint64_t seed = 0;
  std::string arch;

  std::string objective = "grace";
  std::string data_dir;
  std::string out_dir = "out";
  int n_runs = 5;
  std::string metric = "accuracy";

  static ExperimentConfig parse_file(const std::filesystem::path& path);
  static ExperimentConfig parse_string(const std::string& text, const std::string& origin);

  TrainConfig to_train_config() const;
  Metric metric_kind() const { return metric_from_string(metric); }

  /// Canonical "key = value" rendering, sorted by key, used for the digest.
  std::string canonical() const;
  /// 64-bit FNV-1a of the canonical form, as 16 hex digits. Embedded in every
  /// output artifact; reports refuse to aggregate across mismatched digests.
  std::string digest() const;
};

}  // namespace grace
