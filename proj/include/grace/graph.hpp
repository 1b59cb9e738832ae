#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "grace/common.hpp"

namespace grace {

/// Sparse structure in compressed sparse row form. Column indices are sorted
/// within each row; row pointers are monotone nondecreasing.
struct Csr {
  int64_t n = 0;
  std::vector<int64_t> row_ptr;  // size n+1
  std::vector<int32_t> col;      // size nnz

  int64_t nnz() const { return static_cast<int64_t>(col.size()); }
  int64_t row_begin(int64_t i) const { return row_ptr[static_cast<size_t>(i)]; }
  int64_t row_end(int64_t i) const { return row_ptr[static_cast<size_t>(i) + 1]; }
};

/// Undirected edge, stored once with u < v.
using Edge = std::pair<int32_t, int32_t>;

struct LoadStats {
  int64_t raw_edge_lines = 0;       // edge lines seen in edges.txt
  int64_t duplicate_lines = 0;      // repeated or reversed duplicates
  int64_t self_loop_lines = 0;      // dropped with a warning count
  int64_t unique_undirected = 0;    // edges kept
};

/// Undirected attributed graph. Edges are stored once logically (see
/// undirected_edges) and materialized symmetrically in the CSR: (i,j)
/// present iff (j,i) present. The raw edge set carries no self-loops;
/// normalization adds them.
struct Graph {
  int64_t n_nodes = 0;
  Csr adj;                 // symmetric materialization of the undirected edge set
  Matrix features;         // N x F
  std::vector<int32_t> labels;  // -1 = unlabeled
  LoadStats load_stats;

  int64_t num_undirected_edges() const { return adj.nnz() / 2; }
  int64_t feature_dim() const { return features.cols; }
  int64_t n_classes() const;
  int64_t n_labeled() const;

  /// Undirected edges in canonical (u < v, lexicographic) order.
  std::vector<Edge> undirected_edges() const;
};

/// Â = A + I normalized either symmetrically (D̂^{-1/2} Â D̂^{-1/2}) or by
/// row (D̂^{-1} Â). Row kind carries its transpose for the backward pass.
struct NormalizedAdjacency {
  enum class Kind { Symmetric, Row };

  Kind kind = Kind::Symmetric;
  Csr csr;
  std::vector<real> values;

  // Populated for Kind::Row only; symmetric matrices are their own transpose.
  Csr csr_t;
  std::vector<real> values_t;

  int64_t n() const { return csr.n; }
};

struct SplitSpec {
  std::vector<int32_t> train;
  std::vector<int32_t> val;
  std::vector<int32_t> test;
  uint64_t seed = 0;
};

/// Build a graph from an undirected edge list. Duplicates and self-loops are
/// rejected here (the loader dedups before calling this).
Graph build_graph(int64_t n_nodes, const std::vector<Edge>& edges, Matrix features,
                  std::vector<int32_t> labels);

/// Reads edges.txt / features.bin / labels.txt (and splits.json if present)
/// from `dir`. Duplicate and reversed edge lines are deduplicated; self-loop
/// lines are dropped and counted in load_stats.
Graph load_dataset(const std::filesystem::path& dir);

/// Writes the dataset back in the same on-disk layout, canonically ordered so
/// load -> save -> load round-trips bit-identically.
void save_dataset(const std::filesystem::path& dir, const Graph& g);

/// Preset splits from splits.json, if the dataset shipped one.
std::optional<SplitSpec> load_preset_splits(const std::filesystem::path& dir, int64_t n_nodes);

NormalizedAdjacency sym_normalize(const Graph& g);
NormalizedAdjacency row_normalize(const Graph& g);

/// Normalization over an explicit (corrupted) edge set, same node count.
NormalizedAdjacency sym_normalize_edges(int64_t n_nodes, const std::vector<Edge>& edges);
NormalizedAdjacency row_normalize_edges(int64_t n_nodes, const std::vector<Edge>& edges);

/// Random split over the labeled nodes: floor(frac*L) train, floor(frac*L)
/// val, remainder test. Deterministic under a fixed seed.
SplitSpec make_splits(const Graph& g, double train_frac, double val_frac, uint64_t seed);

/// Sparse view of a (typically bag-of-words) feature matrix, with its
/// transpose for gradient accumulation. Built once per graph; per-view
/// column masks are applied at multiply time, since zeroing feature
/// dimensions is the same as skipping those columns.
struct SparseFeatures {
  int64_t rows = 0;
  int64_t cols = 0;
  Csr csr;                     // row i holds the nonzero feature ids of node i
  std::vector<real> vals;
  Csr csr_t;                   // transpose: row j holds the nodes where feature j is set
  std::vector<real> vals_t;
  int64_t nnz() const { return csr.nnz(); }
};

SparseFeatures build_sparse_features(const Matrix& features);

}  // namespace grace
