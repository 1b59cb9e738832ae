#pragma once

#include <filesystem>
#include <vector>

#include "grace/common.hpp"
#include "grace/graph.hpp"
#include "grace/tape.hpp"
#include "grace/views.hpp"

namespace grace {

enum class Activation { ReLU, PReLU, ELU, RReLU };
enum class EncoderArch { Gcn2, Mp3Residual };

const char* to_string(Activation a);
const char* to_string(EncoderArch a);
Activation activation_from_string(const std::string& s);
EncoderArch arch_from_string(const std::string& s);

/// Which adjacency normalization an architecture's propagation rule expects.
inline NormalizedAdjacency::Kind adjacency_kind(EncoderArch arch) {
  return arch == EncoderArch::Gcn2 ? NormalizedAdjacency::Kind::Symmetric
                                   : NormalizedAdjacency::Kind::Row;
}

/// Encoder weights. gcn2 stacks two graph-convolution layers
/// (F -> 2F' -> F'); mp3_residual stacks three mean-pooling layers with two
/// skip projections (hidden width F' throughout). PReLU slopes are learnable
/// scalars, one per layer.
struct EncoderParams {
  EncoderArch arch = EncoderArch::Gcn2;
  Activation activation = Activation::ReLU;
  std::vector<Matrix> weights;
  std::vector<Matrix> prelu_slopes;
  Matrix w_skip;
  Matrix w_skip2;

  int64_t embedding_dim() const { return weights.back().cols; }
};

/// Two-layer MLP projection g: hidden and output width both F', ELU on the
/// hidden layer, linear output. Projection layers carry biases; GC layers do
/// not.
struct ProjectionParams {
  Matrix w1, b1, w2, b2;
};

/// Every trainable matrix in canonical order: encoder weights, PReLU slopes,
/// skip projections, projection head. The same order is used by the
/// optimizer and the checkpoint format.
std::vector<Matrix*> all_parameters(EncoderParams& enc, ProjectionParams& proj);
std::vector<const Matrix*> all_parameters(const EncoderParams& enc, const ProjectionParams& proj);

/// Tape-staged copies of the parameters, shared by every forward pass built
/// on the same tape (so gradients from both views accumulate).
struct StagedParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> slopes;
  Tensor w_skip{};
  Tensor w_skip2{};
  Tensor proj_w1{}, proj_b1{}, proj_w2{}, proj_b2{};
};
StagedParams stage_params(Tape& tape, const EncoderParams& enc, const ProjectionParams& proj,
                          bool requires_grad);

Tensor apply_activation(Tape& tape, Tensor x, Activation act, const Tensor* slope);

/// One graph-convolution layer sigma(A_hat X W) over a symmetric-normalized
/// adjacency.
Tensor gc_layer(Tape& tape, const NormalizedAdjacency& adj, Tensor x, Tensor w, Activation act,
                const Tensor* slope);

/// One mean-pooling layer sigma([D^-1 A_hat X ; X] W) over a row-normalized
/// adjacency. W must have 2 * cols(X) rows.
Tensor mp_layer(Tape& tape, const NormalizedAdjacency& adj, Tensor x, Tensor w, Activation act,
                const Tensor* slope);

/// Feature input for an encoder forward: either a dense tape tensor or a
/// constant sparse matrix with an optional per-view dimension mask. The
/// sparse form feeds the first layer through feature_matmul, which skips
/// masked dimensions instead of materializing a corrupted N x F copy.
struct FeatureInput {
  Tensor dense{};
  const SparseFeatures* sparse = nullptr;
  const std::vector<uint8_t>* keep = nullptr;

  static FeatureInput from_dense(Tensor t) { return FeatureInput{t, nullptr, nullptr}; }
  static FeatureInput from_sparse(const SparseFeatures& sf, const std::vector<uint8_t>* mask) {
    return FeatureInput{Tensor{}, &sf, mask};
  }
  bool is_sparse() const { return sparse != nullptr; }
};

/// Full encoder forward for whichever arch the staged params carry.
Tensor encode(Tape& tape, const NormalizedAdjacency& adj, Tensor features,
              const EncoderParams& shapes, const StagedParams& staged);
Tensor encode(Tape& tape, const NormalizedAdjacency& adj, const FeatureInput& features,
              const EncoderParams& shapes, const StagedParams& staged);

/// Projection head g applied to an embedding matrix.
Tensor project(Tape& tape, Tensor embedding, const StagedParams& staged);

/// Non-differentiating forward pass: embeddings of (features, adj) under the
/// given parameters.
Matrix encode_plain(const NormalizedAdjacency& adj, const Matrix& features,
                    const EncoderParams& enc, const ProjectionParams& proj);

/// Versioned binary checkpoint: magic GRCP, version, arch tag, layer count,
/// then each tensor as rows/cols (u64 LE) + binary64 values. The activation
/// is supplied by the caller's config; tensor shapes self-describe the rest.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& enc,
                     const ProjectionParams& proj);
void load_checkpoint(const std::filesystem::path& path, Activation activation, EncoderParams& enc,
                     ProjectionParams& proj);

}  // namespace grace
