#pragma once

#include <cstdint>
#include <vector>

#include "grace/common.hpp"
#include "grace/graph.hpp"
#include "grace/rng.hpp"

namespace grace {

/// Corruption strengths for one view: p_r removes edges, p_m masks feature
/// dimensions.
struct CorruptionParams {
  double p_r = 0.0;
  double p_m = 0.0;
};

struct ViewProvenance {
  uint64_t seed = 0;
  uint64_t epoch = 0;
  uint32_t view_index = 0;  // 1 or 2
};

/// One stochastically corrupted copy of the graph: normalized adjacency over
/// the surviving edges (degrees recomputed on the corrupted edge set) and
/// features with a shared column mask applied. feature_keep records the mask
/// draw (1 = dimension kept), which sparse encoder paths consume directly.
struct GraphView {
  NormalizedAdjacency adjacency;
  Matrix features;
  std::vector<uint8_t> feature_keep;
  ViewProvenance provenance;
  int64_t kept_edges = 0;
  int64_t masked_dims = 0;
};

/// Drops each undirected edge independently with probability p_r. One
/// Bernoulli draw per undirected edge, applied to both orientations, so the
/// corrupted adjacency stays symmetric. Never introduces edges.
std::vector<Edge> remove_edges(const Graph& g, double p_r, StreamRng& rng);

/// Draws a single mask vector over the F dimensions and applies it to every
/// row: masked dimensions are exactly-zero columns, identical across nodes.
Matrix mask_features(const Matrix& x, double p_m, StreamRng& rng);

/// Composes remove_edges, mask_features and normalization. The two views of
/// an epoch use disjoint substreams keyed by (seed, epoch, view_index), so
/// either can be regenerated in isolation. When materialize_features is
/// false only feature_keep is filled and the dense copy is skipped (callers
/// on the sparse path avoid an N x F materialization per epoch).
GraphView generate_view(const Graph& g, const CorruptionParams& params, uint64_t seed,
                        uint64_t epoch, uint32_t view_index,
                        NormalizedAdjacency::Kind kind = NormalizedAdjacency::Kind::Symmetric,
                        bool materialize_features = true);

/// One-shot contamination used by the robustness study: zeroes a `rate`
/// fraction of individual feature entries. Distinct from mask_features,
/// which resamples whole dimensions per epoch.
Matrix contaminate_features(const Matrix& x, double rate, uint64_t seed);

}  // namespace grace
