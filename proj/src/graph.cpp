#include "grace/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "grace/rng.hpp"

namespace grace {

namespace {

constexpr char kFeatureMagic[4] = {'G', 'R', 'F', 'X'};

void throw_parse(const std::filesystem::path& file, int64_t line_no, const std::string& what) {
  throw DataError(file.string() + ":" + std::to_string(line_no) + ": " + what);
}

Csr csr_from_symmetric_pairs(int64_t n, const std::vector<Edge>& edges) {
  Csr csr;
  csr.n = n;
  csr.row_ptr.assign(static_cast<size_t>(n) + 1, 0);
  for (const auto& [u, v] : edges) {
    csr.row_ptr[static_cast<size_t>(u) + 1]++;
    csr.row_ptr[static_cast<size_t>(v) + 1]++;
  }
  for (int64_t i = 0; i < n; ++i) csr.row_ptr[i + 1] += csr.row_ptr[i];
  csr.col.resize(static_cast<size_t>(csr.row_ptr[n]));
  std::vector<int64_t> cursor(csr.row_ptr.begin(), csr.row_ptr.end() - 1);
  for (const auto& [u, v] : edges) {
    csr.col[static_cast<size_t>(cursor[u]++)] = v;
    csr.col[static_cast<size_t>(cursor[v]++)] = u;
  }
  for (int64_t i = 0; i < n; ++i) {
    std::sort(csr.col.begin() + csr.row_begin(i), csr.col.begin() + csr.row_end(i));
  }
  return csr;
}

// Shared by sym/row normalization: Â = A + I over the given edge set, with
// degrees recomputed from that edge set.
NormalizedAdjacency normalize_edges(int64_t n, const std::vector<Edge>& edges,
                                    NormalizedAdjacency::Kind kind) {
  NormalizedAdjacency out;
  out.kind = kind;
  // Build Â's structure: the symmetric edge CSR plus the diagonal.
  Csr base = csr_from_symmetric_pairs(n, edges);
  out.csr.n = n;
  out.csr.row_ptr.assign(static_cast<size_t>(n) + 1, 0);
  for (int64_t i = 0; i < n; ++i) {
    out.csr.row_ptr[i + 1] = out.csr.row_ptr[i] + (base.row_end(i) - base.row_begin(i)) + 1;
  }
  out.csr.col.resize(static_cast<size_t>(out.csr.row_ptr[n]));
  out.values.resize(out.csr.col.size());

  std::vector<real> inv_sqrt_deg;
  std::vector<real> deg(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    deg[static_cast<size_t>(i)] = static_cast<real>(base.row_end(i) - base.row_begin(i) + 1);
  }
  if (kind == NormalizedAdjacency::Kind::Symmetric) {
    inv_sqrt_deg.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      inv_sqrt_deg[static_cast<size_t>(i)] = real(1) / std::sqrt(deg[static_cast<size_t>(i)]);
    }
  }

  for (int64_t i = 0; i < n; ++i) {
    int64_t w = out.csr.row_begin(i);
    bool diag_placed = false;
    auto place = [&](int32_t j) {
      if (kind == NormalizedAdjacency::Kind::Symmetric) {
        // 1/sqrt(d_i d_j), computed identically for (i,j) and (j,i) so the
        // matrix is bitwise symmetric.
        out.values[static_cast<size_t>(w)] =
            inv_sqrt_deg[static_cast<size_t>(i)] * inv_sqrt_deg[static_cast<size_t>(j)];
      } else {
        out.values[static_cast<size_t>(w)] = real(1) / deg[static_cast<size_t>(i)];
      }
      out.csr.col[static_cast<size_t>(w)] = j;
      ++w;
    };
    for (int64_t k = base.row_begin(i); k < base.row_end(i); ++k) {
      int32_t j = base.col[static_cast<size_t>(k)];
      if (!diag_placed && j > i) {
        place(static_cast<int32_t>(i));
        diag_placed = true;
      }
      place(j);
    }
    if (!diag_placed) place(static_cast<int32_t>(i));
  }

  if (kind == NormalizedAdjacency::Kind::Row) {
    // Transpose for the backward pass. Structure is symmetric (Â is), only
    // the values move: value_t(i,j) = value(j,i) = 1/deg_j.
    out.csr_t = out.csr;
    out.values_t.resize(out.values.size());
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t k = out.csr.row_begin(i); k < out.csr.row_end(i); ++k) {
        int32_t j = out.csr.col[static_cast<size_t>(k)];
        out.values_t[static_cast<size_t>(k)] = real(1) / deg[static_cast<size_t>(j)];
      }
    }
  }
  return out;
}

}  // namespace

int64_t Graph::n_classes() const {
  int32_t mx = -1;
  for (int32_t y : labels) mx = std::max(mx, y);
  return mx + 1;
}

int64_t Graph::n_labeled() const {
  int64_t c = 0;
  for (int32_t y : labels)
    if (y >= 0) ++c;
  return c;
}

std::vector<Edge> Graph::undirected_edges() const {
  std::vector<Edge> edges;
  edges.reserve(static_cast<size_t>(adj.nnz() / 2));
  for (int64_t i = 0; i < n_nodes; ++i) {
    for (int64_t k = adj.row_begin(i); k < adj.row_end(i); ++k) {
      int32_t j = adj.col[static_cast<size_t>(k)];
      if (j > i) edges.emplace_back(static_cast<int32_t>(i), j);
    }
  }
  return edges;
}

Graph build_graph(int64_t n_nodes, const std::vector<Edge>& edges, Matrix features,
                  std::vector<int32_t> labels) {
  if (features.rows != n_nodes) {
    throw DataError("feature matrix row count (" + std::to_string(features.rows) +
                    ") does not match node count (" + std::to_string(n_nodes) + ")");
  }
  if (static_cast<int64_t>(labels.size()) != n_nodes) {
    throw DataError("label count (" + std::to_string(labels.size()) +
                    ") does not match node count (" + std::to_string(n_nodes) + ")");
  }
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= n_nodes || v >= n_nodes)
      throw DataError("edge endpoint out of range");
    if (u == v) throw DataError("self-loop in edge list");
    if (u > v) throw DataError("edge list not in canonical (u < v) form");
  }
  Graph g;
  g.n_nodes = n_nodes;
  g.adj = csr_from_symmetric_pairs(n_nodes, edges);
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.load_stats.unique_undirected = g.num_undirected_edges();
  // Duplicate edges would show up as repeated columns within a row.
  for (int64_t i = 0; i < n_nodes; ++i) {
    for (int64_t k = g.adj.row_begin(i) + 1; k < g.adj.row_end(i); ++k) {
      if (g.adj.col[static_cast<size_t>(k)] == g.adj.col[static_cast<size_t>(k - 1)])
        throw DataError("duplicate edge in edge list");
    }
  }
  return g;
}

Graph load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path edges_path = dir / "edges.txt";
  const fs::path features_path = dir / "features.bin";
  const fs::path labels_path = dir / "labels.txt";
  for (const auto& p : {edges_path, features_path, labels_path}) {
    if (!fs::exists(p)) throw DataError("missing dataset file: " + p.string());
  }

  // features.bin: magic, version, N, F, then N*F binary64 LE row-major.
  std::ifstream fbin(features_path, std::ios::binary);
  char magic[4];
  fbin.read(magic, 4);
  if (!fbin || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw DataError(features_path.string() + ": bad magic (expected GRFX)");
  uint32_t version = 0;
  fbin.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!fbin || version != 1)
    throw DataError(features_path.string() + ": unsupported version " + std::to_string(version));
  uint64_t n_u64 = 0, f_u64 = 0;
  fbin.read(reinterpret_cast<char*>(&n_u64), sizeof(n_u64));
  fbin.read(reinterpret_cast<char*>(&f_u64), sizeof(f_u64));
  if (!fbin) throw DataError(features_path.string() + ": truncated header");
  const int64_t n = static_cast<int64_t>(n_u64);
  const int64_t f = static_cast<int64_t>(f_u64);
  Matrix features(n, f);
  {
    std::vector<double> buf(static_cast<size_t>(n) * static_cast<size_t>(f));
    fbin.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!fbin) throw DataError(features_path.string() + ": truncated value block");
    for (size_t i = 0; i < buf.size(); ++i) features.v[i] = static_cast<real>(buf[i]);
  }

  // labels.txt: one integer per line, -1 = unlabeled.
  std::vector<int32_t> labels;
  {
    std::ifstream in(labels_path);
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      try {
        size_t pos = 0;
        int v = std::stoi(line, &pos);
        if (pos != line.size()) throw std::invalid_argument("trailing characters");
        labels.push_back(v);
      } catch (const std::exception&) {
        throw_parse(labels_path, line_no, "malformed label line '" + line + "'");
      }
    }
  }
  if (static_cast<int64_t>(labels.size()) != n) {
    throw DataError("dimension mismatch: features.bin header N=" + std::to_string(n) +
                    " but labels.txt has " + std::to_string(labels.size()) + " lines");
  }

  // edges.txt: "u v" per line, '#' comments; dedup reversed/repeated pairs,
  // drop self-loops with a warning count.
  LoadStats stats;
  std::set<Edge> edge_set;
  {
    std::ifstream in(edges_path);
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      long long u = 0, v = 0;
      char extra = 0;
      int matched = std::sscanf(line.c_str(), "%lld %lld %c", &u, &v, &extra);
      if (matched != 2) throw_parse(edges_path, line_no, "malformed edge line '" + line + "'");
      if (u < 0 || v < 0 || u >= n || v >= n)
        throw_parse(edges_path, line_no, "node id out of range in '" + line + "'");
      ++stats.raw_edge_lines;
      if (u == v) {
        ++stats.self_loop_lines;
        continue;
      }
      Edge e{static_cast<int32_t>(std::min(u, v)), static_cast<int32_t>(std::max(u, v))};
      if (!edge_set.insert(e).second) ++stats.duplicate_lines;
    }
  }
  if (stats.self_loop_lines > 0) {
    std::fprintf(stderr, "warning: %s: dropped %lld self-loop line(s)\n", edges_path.c_str(),
                 static_cast<long long>(stats.self_loop_lines));
  }
  std::vector<Edge> edges(edge_set.begin(), edge_set.end());
  stats.unique_undirected = static_cast<int64_t>(edges.size());

  Graph g = build_graph(n, edges, std::move(features), std::move(labels));
  g.load_stats = stats;
  return g;
}

void save_dataset(const std::filesystem::path& dir, const Graph& g) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "edges.txt");
    for (const auto& [u, v] : g.undirected_edges()) out << u << ' ' << v << '\n';
  }
  {
    std::ofstream out(dir / "features.bin", std::ios::binary);
    out.write(kFeatureMagic, 4);
    uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint64_t n = static_cast<uint64_t>(g.n_nodes);
    uint64_t f = static_cast<uint64_t>(g.features.cols);
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    std::vector<double> buf(g.features.v.begin(), g.features.v.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
  }
  {
    std::ofstream out(dir / "labels.txt");
    for (int32_t y : g.labels) out << y << '\n';
  }
}

std::optional<SplitSpec> load_preset_splits(const std::filesystem::path& dir, int64_t n_nodes) {
  const auto path = dir / "splits.json";
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  SplitSpec s;
  auto read = [&](const char* key, std::vector<int32_t>& out) {
    if (!j.contains(key) || !j[key].is_array())
      throw DataError(path.string() + ": missing integer array '" + key + "'");
    for (const auto& x : j[key]) {
      int64_t idx = x.get<int64_t>();
      if (idx < 0 || idx >= n_nodes) throw DataError(path.string() + ": index out of range");
      out.push_back(static_cast<int32_t>(idx));
    }
  };
  read("train", s.train);
  read("val", s.val);
  read("test", s.test);
  return s;
}

NormalizedAdjacency sym_normalize(const Graph& g) {
  return normalize_edges(g.n_nodes, g.undirected_edges(), NormalizedAdjacency::Kind::Symmetric);
}

NormalizedAdjacency row_normalize(const Graph& g) {
  return normalize_edges(g.n_nodes, g.undirected_edges(), NormalizedAdjacency::Kind::Row);
}

NormalizedAdjacency sym_normalize_edges(int64_t n_nodes, const std::vector<Edge>& edges) {
  return normalize_edges(n_nodes, edges, NormalizedAdjacency::Kind::Symmetric);
}

NormalizedAdjacency row_normalize_edges(int64_t n_nodes, const std::vector<Edge>& edges) {
  return normalize_edges(n_nodes, edges, NormalizedAdjacency::Kind::Row);
}

SparseFeatures build_sparse_features(const Matrix& features) {
  SparseFeatures sf;
  sf.rows = features.rows;
  sf.cols = features.cols;
  sf.csr.n = features.rows;
  sf.csr.row_ptr.assign(static_cast<size_t>(features.rows) + 1, 0);
  for (int64_t i = 0; i < features.rows; ++i) {
    const real* row = features.row_ptr(i);
    int64_t cnt = 0;
    for (int64_t j = 0; j < features.cols; ++j) {
      if (row[j] != real(0)) ++cnt;
    }
    sf.csr.row_ptr[static_cast<size_t>(i) + 1] = sf.csr.row_ptr[static_cast<size_t>(i)] + cnt;
  }
  sf.csr.col.resize(static_cast<size_t>(sf.csr.row_ptr[features.rows]));
  sf.vals.resize(sf.csr.col.size());
  for (int64_t i = 0; i < features.rows; ++i) {
    const real* row = features.row_ptr(i);
    int64_t w = sf.csr.row_begin(i);
    for (int64_t j = 0; j < features.cols; ++j) {
      if (row[j] != real(0)) {
        sf.csr.col[static_cast<size_t>(w)] = static_cast<int32_t>(j);
        sf.vals[static_cast<size_t>(w)] = row[j];
        ++w;
      }
    }
  }
  // Transpose (feature-major) for gradient accumulation.
  sf.csr_t.n = features.cols;
  sf.csr_t.row_ptr.assign(static_cast<size_t>(features.cols) + 1, 0);
  for (int32_t j : sf.csr.col) sf.csr_t.row_ptr[static_cast<size_t>(j) + 1]++;
  for (int64_t j = 0; j < features.cols; ++j) sf.csr_t.row_ptr[j + 1] += sf.csr_t.row_ptr[j];
  sf.csr_t.col.resize(sf.csr.col.size());
  sf.vals_t.resize(sf.csr.col.size());
  std::vector<int64_t> cursor(sf.csr_t.row_ptr.begin(), sf.csr_t.row_ptr.end() - 1);
  for (int64_t i = 0; i < features.rows; ++i) {
    for (int64_t k = sf.csr.row_begin(i); k < sf.csr.row_end(i); ++k) {
      const int32_t j = sf.csr.col[static_cast<size_t>(k)];
      const int64_t w = cursor[static_cast<size_t>(j)]++;
      sf.csr_t.col[static_cast<size_t>(w)] = static_cast<int32_t>(i);
      sf.vals_t[static_cast<size_t>(w)] = sf.vals[static_cast<size_t>(k)];
    }
  }
  return sf;
}

SplitSpec make_splits(const Graph& g, double train_frac, double val_frac, uint64_t seed) {
  if (!(train_frac > 0) || !(val_frac > 0) || !(train_frac + val_frac < 1.0)) {
    throw ConfigError("split fractions must be positive and sum to less than 1");
  }
  std::vector<int32_t> labeled;
  for (int64_t i = 0; i < g.n_nodes; ++i) {
    if (g.labels[static_cast<size_t>(i)] >= 0) labeled.push_back(static_cast<int32_t>(i));
  }
  const int64_t L = static_cast<int64_t>(labeled.size());
  auto rng = StreamRng::substream(seed, 0, 0, RngPurpose::Split);
  // Fisher-Yates over the labeled node ids.
  for (int64_t i = L - 1; i > 0; --i) {
    uint64_t j = rng.next_below(static_cast<uint64_t>(i) + 1);
    std::swap(labeled[static_cast<size_t>(i)], labeled[j]);
  }
  const int64_t n_train = static_cast<int64_t>(std::floor(train_frac * static_cast<double>(L)));
  const int64_t n_val = static_cast<int64_t>(std::floor(val_frac * static_cast<double>(L)));
  SplitSpec s;
  s.seed = seed;
  s.train.assign(labeled.begin(), labeled.begin() + n_train);
  s.val.assign(labeled.begin() + n_train, labeled.begin() + n_train + n_val);
  s.test.assign(labeled.begin() + n_train + n_val, labeled.end());
  return s;
}

}  // namespace grace
