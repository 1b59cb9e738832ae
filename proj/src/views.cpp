#include "grace/views.hpp"

#include <stdexcept>

namespace grace {

namespace {
void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string(name) + " must lie in [0,1], got " + std::to_string(p));
  }
}
}  // namespace

std::vector<Edge> remove_edges(const Graph& g, double p_r, StreamRng& rng) {
  check_probability(p_r, "p_r");
  std::vector<Edge> kept;
  const auto edges = g.undirected_edges();
  kept.reserve(edges.size());
  for (const Edge& e : edges) {
    // Keep with probability 1 - p_r; the draw covers both orientations.
    if (!rng.bernoulli(p_r)) kept.push_back(e);
  }
  return kept;
}

Matrix mask_features(const Matrix& x, double p_m, StreamRng& rng) {
  check_probability(p_m, "p_m");
  std::vector<uint8_t> keep(static_cast<size_t>(x.cols));
  for (int64_t j = 0; j < x.cols; ++j) keep[static_cast<size_t>(j)] = rng.bernoulli(p_m) ? 0 : 1;
  Matrix out(x.rows, x.cols);
  for (int64_t i = 0; i < x.rows; ++i) {
    const real* src = x.row_ptr(i);
    real* dst = out.row_ptr(i);
    for (int64_t j = 0; j < x.cols; ++j) {
      dst[j] = keep[static_cast<size_t>(j)] ? src[j] : real(0);
    }
  }
  return out;
}

GraphView generate_view(const Graph& g, const CorruptionParams& params, uint64_t seed,
                        uint64_t epoch, uint32_t view_index, NormalizedAdjacency::Kind kind,
                        bool materialize_features) {
  auto edge_rng = StreamRng::substream(seed, epoch, view_index, RngPurpose::EdgeRemoval);
  auto mask_rng = StreamRng::substream(seed, epoch, view_index, RngPurpose::FeatureMask);

  GraphView view;
  const auto kept = remove_edges(g, params.p_r, edge_rng);
  view.kept_edges = static_cast<int64_t>(kept.size());
  view.adjacency = (kind == NormalizedAdjacency::Kind::Symmetric)
                       ? sym_normalize_edges(g.n_nodes, kept)
                       : row_normalize_edges(g.n_nodes, kept);

  check_probability(params.p_m, "p_m");
  view.feature_keep.assign(static_cast<size_t>(g.features.cols), 1);
  int64_t masked = 0;
  for (int64_t j = 0; j < g.features.cols; ++j) {
    if (mask_rng.bernoulli(params.p_m)) {
      view.feature_keep[static_cast<size_t>(j)] = 0;
      ++masked;
    }
  }
  view.masked_dims = masked;

  if (materialize_features) {
    view.features = Matrix(g.features.rows, g.features.cols);
    for (int64_t i = 0; i < g.features.rows; ++i) {
      const real* src = g.features.row_ptr(i);
      real* dst = view.features.row_ptr(i);
      for (int64_t j = 0; j < g.features.cols; ++j) {
        dst[j] = view.feature_keep[static_cast<size_t>(j)] ? src[j] : real(0);
      }
    }
  }
  view.provenance = ViewProvenance{seed, epoch, view_index};
  return view;
}

Matrix contaminate_features(const Matrix& x, double rate, uint64_t seed) {
  check_probability(rate, "contamination rate");
  auto rng = StreamRng::substream(seed, 0, 0, RngPurpose::Contaminate);
  Matrix out = x;
  for (real& v : out.v) {
    if (rng.bernoulli(rate)) v = real(0);
  }
  return out;
}

}  // namespace grace
