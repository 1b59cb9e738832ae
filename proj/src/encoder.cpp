#include "grace/encoder.hpp"

#include <cstring>
#include <fstream>

namespace grace {

namespace {
constexpr char kCheckpointMagic[4] = {'G', 'R', 'C', 'P'};

void write_tensor(std::ofstream& out, const Matrix& m) {
  uint64_t r = static_cast<uint64_t>(m.rows), c = static_cast<uint64_t>(m.cols);
  out.write(reinterpret_cast<const char*>(&r), sizeof(r));
  out.write(reinterpret_cast<const char*>(&c), sizeof(c));
  std::vector<double> buf(m.v.begin(), m.v.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
}

bool read_tensor(std::ifstream& in, Matrix& m) {
  uint64_t r = 0, c = 0;
  in.read(reinterpret_cast<char*>(&r), sizeof(r));
  if (in.eof()) return false;
  in.read(reinterpret_cast<char*>(&c), sizeof(c));
  if (!in) throw DataError("checkpoint: truncated tensor header");
  m = Matrix(static_cast<int64_t>(r), static_cast<int64_t>(c));
  std::vector<double> buf(static_cast<size_t>(r * c));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(double)));
  if (!in) throw DataError("checkpoint: truncated tensor values");
  for (size_t i = 0; i < buf.size(); ++i) m.v[i] = static_cast<real>(buf[i]);
  return true;
}
}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::PReLU: return "prelu";
    case Activation::ELU: return "elu";
    case Activation::RReLU: return "rrelu";
  }
  return "?";
}

const char* to_string(EncoderArch a) {
  return a == EncoderArch::Gcn2 ? "gcn2" : "mp3_residual";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "prelu") return Activation::PReLU;
  if (s == "elu") return Activation::ELU;
  if (s == "rrelu") return Activation::RReLU;
  throw ConfigError("unknown activation '" + s + "' (expected relu|prelu|elu|rrelu)");
}

EncoderArch arch_from_string(const std::string& s) {
  if (s == "gcn2") return EncoderArch::Gcn2;
  if (s == "mp3_residual") return EncoderArch::Mp3Residual;
  throw ConfigError("unknown arch '" + s + "' (expected gcn2|mp3_residual)");
}

std::vector<Matrix*> all_parameters(EncoderParams& enc, ProjectionParams& proj) {
  std::vector<Matrix*> out;
  for (Matrix& w : enc.weights) out.push_back(&w);
  for (Matrix& s : enc.prelu_slopes) out.push_back(&s);
  if (enc.arch == EncoderArch::Mp3Residual) {
    out.push_back(&enc.w_skip);
    out.push_back(&enc.w_skip2);
  }
  out.push_back(&proj.w1);
  out.push_back(&proj.b1);
  out.push_back(&proj.w2);
  out.push_back(&proj.b2);
  return out;
}

std::vector<const Matrix*> all_parameters(const EncoderParams& enc, const ProjectionParams& proj) {
  auto mut = all_parameters(const_cast<EncoderParams&>(enc), const_cast<ProjectionParams&>(proj));
  return {mut.begin(), mut.end()};
}

StagedParams stage_params(Tape& tape, const EncoderParams& enc, const ProjectionParams& proj,
                          bool requires_grad) {
  StagedParams sp;
  for (const Matrix& w : enc.weights) sp.weights.push_back(tape.leaf(w, requires_grad));
  for (const Matrix& s : enc.prelu_slopes) sp.slopes.push_back(tape.leaf(s, requires_grad));
  if (enc.arch == EncoderArch::Mp3Residual) {
    sp.w_skip = tape.leaf(enc.w_skip, requires_grad);
    sp.w_skip2 = tape.leaf(enc.w_skip2, requires_grad);
  }
  sp.proj_w1 = tape.leaf(proj.w1, requires_grad);
  sp.proj_b1 = tape.leaf(proj.b1, requires_grad);
  sp.proj_w2 = tape.leaf(proj.w2, requires_grad);
  sp.proj_b2 = tape.leaf(proj.b2, requires_grad);
  return sp;
}

Tensor apply_activation(Tape& tape, Tensor x, Activation act, const Tensor* slope) {
  switch (act) {
    case Activation::ReLU: return tape.relu(x);
    case Activation::PReLU:
      if (slope == nullptr) throw ShapeError("prelu activation needs a slope parameter");
      return tape.prelu(x, *slope);
    case Activation::ELU: return tape.elu(x);
    case Activation::RReLU: return tape.rrelu(x);
  }
  throw ShapeError("unknown activation");
}

Tensor gc_layer(Tape& tape, const NormalizedAdjacency& adj, Tensor x, Tensor w, Activation act,
                const Tensor* slope) {
  if (adj.kind != NormalizedAdjacency::Kind::Symmetric)
    throw ShapeError("gc_layer requires a symmetric-normalized adjacency");
  return apply_activation(tape, tape.matmul(tape.spmm(adj, x), w), act, slope);
}

Tensor mp_layer(Tape& tape, const NormalizedAdjacency& adj, Tensor x, Tensor w, Activation act,
                const Tensor* slope) {
  if (adj.kind != NormalizedAdjacency::Kind::Row)
    throw ShapeError("mp_layer requires a row-normalized adjacency");
  require_shape(w.rows() == 2 * x.cols(), "mp_layer: W must have 2*F_in rows");
  Tensor mean = tape.spmm(adj, x);
  return apply_activation(tape, tape.matmul(tape.concat_cols(mean, x), w), act, slope);
}

Tensor encode(Tape& tape, const NormalizedAdjacency& adj, Tensor features,
              const EncoderParams& shapes, const StagedParams& staged) {
  return encode(tape, adj, FeatureInput::from_dense(features), shapes, staged);
}

Tensor encode(Tape& tape, const NormalizedAdjacency& adj, const FeatureInput& features,
              const EncoderParams& shapes, const StagedParams& staged) {
  const Activation act = shapes.activation;
  auto slope = [&](size_t i) -> const Tensor* {
    return staged.slopes.empty() ? nullptr : &staged.slopes[i];
  };
  if (shapes.arch == EncoderArch::Gcn2) {
    if (staged.weights.size() != 2) throw ShapeError("gcn2 encoder expects 2 weight matrices");
    Tensor h1;
    if (features.is_sparse()) {
      if (adj.kind != NormalizedAdjacency::Kind::Symmetric)
        throw ShapeError("gc_layer requires a symmetric-normalized adjacency");
      // A(XW) instead of (AX)W: same product, but XW exploits feature sparsity.
      Tensor xw = tape.feature_matmul(*features.sparse, staged.weights[0], features.keep);
      h1 = apply_activation(tape, tape.spmm(adj, xw), act, slope(0));
    } else {
      h1 = gc_layer(tape, adj, features.dense, staged.weights[0], act, slope(0));
    }
    return gc_layer(tape, adj, h1, staged.weights[1], act, slope(1));
  }
  if (features.is_sparse())
    throw ShapeError("mp3_residual encoder takes dense features");
  if (staged.weights.size() != 3)
    throw ShapeError("mp3_residual encoder expects 3 weight matrices");
  Tensor x = features.dense;
  Tensor h1 = mp_layer(tape, adj, x, staged.weights[0], act, slope(0));
  Tensor in2 = tape.add(tape.matmul(x, staged.w_skip), h1);
  Tensor h2 = mp_layer(tape, adj, in2, staged.weights[1], act, slope(1));
  Tensor in3 = tape.add(tape.add(tape.matmul(x, staged.w_skip2), h1), h2);
  return mp_layer(tape, adj, in3, staged.weights[2], act, slope(2));
}

Tensor project(Tape& tape, Tensor embedding, const StagedParams& staged) {
  Tensor hidden = tape.elu(tape.add_bias(tape.matmul(embedding, staged.proj_w1), staged.proj_b1));
  return tape.add_bias(tape.matmul(hidden, staged.proj_w2), staged.proj_b2);
}

Matrix encode_plain(const NormalizedAdjacency& adj, const Matrix& features,
                    const EncoderParams& enc, const ProjectionParams& proj) {
  Tape tape;
  StagedParams sp = stage_params(tape, enc, proj, false);
  Tensor x = tape.constant(features);
  Tensor h = encode(tape, adj, x, enc, sp);
  return h.value();
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& enc,
                     const ProjectionParams& proj) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  out.write(kCheckpointMagic, 4);
  uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  uint8_t arch = enc.arch == EncoderArch::Gcn2 ? 0 : 1;
  uint8_t layers = static_cast<uint8_t>(enc.weights.size());
  out.write(reinterpret_cast<const char*>(&arch), 1);
  out.write(reinterpret_cast<const char*>(&layers), 1);
  for (const Matrix* m : all_parameters(enc, proj)) write_tensor(out, *m);
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, Activation activation, EncoderParams& enc,
                     ProjectionParams& proj) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw DataError(path.string() + ": bad checkpoint magic (expected GRCP)");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != 1)
    throw DataError(path.string() + ": unsupported checkpoint version");
  uint8_t arch = 0, layers = 0;
  in.read(reinterpret_cast<char*>(&arch), 1);
  in.read(reinterpret_cast<char*>(&layers), 1);
  if (!in || arch > 1) throw DataError(path.string() + ": bad arch tag");

  enc = EncoderParams{};
  enc.arch = arch == 0 ? EncoderArch::Gcn2 : EncoderArch::Mp3Residual;
  enc.activation = activation;

  std::vector<Matrix> tensors;
  Matrix m;
  while (read_tensor(in, m)) tensors.push_back(std::move(m));

  const size_t n_layers = layers;
  const size_t n_slopes = activation == Activation::PReLU ? n_layers : 0;
  const size_t n_skip = enc.arch == EncoderArch::Mp3Residual ? 2 : 0;
  const size_t expected = n_layers + n_slopes + n_skip + 4;
  if (tensors.size() != expected) {
    throw DataError(path.string() + ": tensor count " + std::to_string(tensors.size()) +
                    " does not match arch/activation (expected " + std::to_string(expected) + ")");
  }
  size_t k = 0;
  for (size_t i = 0; i < n_layers; ++i) enc.weights.push_back(std::move(tensors[k++]));
  for (size_t i = 0; i < n_slopes; ++i) enc.prelu_slopes.push_back(std::move(tensors[k++]));
  if (n_skip) {
    enc.w_skip = std::move(tensors[k++]);
    enc.w_skip2 = std::move(tensors[k++]);
  }
  proj.w1 = std::move(tensors[k++]);
  proj.b1 = std::move(tensors[k++]);
  proj.w2 = std::move(tensors[k++]);
  proj.b2 = std::move(tensors[k++]);
  for (size_t i = 1; i < enc.weights.size(); ++i) {
    if (enc.arch == EncoderArch::Gcn2 && enc.weights[i].rows != enc.weights[i - 1].cols)
      throw DataError(path.string() + ": layer dimensions do not chain");
  }
}

}  // namespace grace
