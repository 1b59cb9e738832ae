#include "grace/tape.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Dense>

namespace grace {

namespace {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;
using RowArr = Eigen::Array<real, Eigen::Dynamic, 1>;
using RowMap = Eigen::Map<RowArr>;
using RowCMap = Eigen::Map<const RowArr>;

CMap emap(const Matrix& m) { return CMap(m.v.data(), m.rows, m.cols); }
Map emap(Matrix& m) { return Map(m.v.data(), m.rows, m.cols); }

// out += A * X over CSR rows; each output row is owned by one thread and
// accumulated in CSR order, so the result is thread-count independent.
void spmm_accumulate(const Csr& csr, const std::vector<real>& vals, const Matrix& x, Matrix& out) {
  const int64_t cols = x.cols;
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < csr.n; ++i) {
    real* dst = out.row_ptr(i);
    for (int64_t k = csr.row_begin(i); k < csr.row_end(i); ++k) {
      const real a = vals[static_cast<size_t>(k)];
      const real* src = x.row_ptr(csr.col[static_cast<size_t>(k)]);
      for (int64_t j = 0; j < cols; ++j) dst[j] += a * src[j];
    }
  }
}

}  // namespace

bool Tape::fault_injection_enabled = false;

void ensure_finite(const Matrix& m, const std::string& what) {
  for (real x : m.v) {
    if (!std::isfinite(x)) {
      throw NumericError(what + ": non-finite value detected");
    }
  }
}

int64_t Tensor::rows() const { return tape->value(id).rows; }
int64_t Tensor::cols() const { return tape->value(id).cols; }
const Matrix& Tensor::value() const { return tape->value(id); }
bool Tensor::requires_grad() const { return tape->node_requires_grad(id); }
void Tensor::ensure_finite(const std::string& what) const { grace::ensure_finite(value(), what); }

Tensor Tape::push(Matrix value, bool requires_grad, std::function<void()> backprop) {
  if (finished_) throw AutodiffError("tape already consumed by backward");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = requires_grad ? std::move(backprop) : nullptr;
  nodes_.push_back(std::move(n));
  return Tensor{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Matrix& Tape::grad_buf(int32_t id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.grad_live) {
    n.grad = Matrix::zeros(n.value.rows, n.value.cols);
    n.grad_live = true;
  }
  return n.grad;
}

void Tape::check_owns(Tensor t, const char* op) const {
  if (t.tape != this || t.id < 0 || static_cast<size_t>(t.id) >= nodes_.size()) {
    throw AutodiffError(std::string(op) + ": tensor does not belong to this tape");
  }
}

Tensor Tape::leaf(Matrix value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Tensor Tape::matmul(Tensor a, Tensor b) {
  check_owns(a, "matmul");
  check_owns(b, "matmul");
  const Matrix& av = value(a.id);
  const Matrix& bv = value(b.id);
  require_shape(av.cols == bv.rows, "matmul: inner dimensions disagree");
  Matrix out(av.rows, bv.cols);
  emap(out).noalias() = emap(av) * emap(bv);
  const int32_t ia = a.id, ib = b.id;
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  Tensor t = push(std::move(out), ga || gb, nullptr);
  if (ga || gb) {
    const int32_t self = t.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, ia, ib, ga, gb, self]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      if (ga) emap(grad_buf(ia)).noalias() += emap(g) * emap(value(ib)).transpose();
      if (gb) emap(grad_buf(ib)).noalias() += emap(value(ia)).transpose() * emap(g);
    };
  }
  return t;
}

Tensor Tape::spmm(const NormalizedAdjacency& a, Tensor x) {
  check_owns(x, "spmm");
  const Matrix& xv = value(x.id);
  require_shape(a.n() == xv.rows, "spmm: adjacency size does not match rows of X");
  Matrix out(xv.rows, xv.cols);
  spmm_accumulate(a.csr, a.values, xv, out);
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    const NormalizedAdjacency* adj = &a;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix, adj]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      // dX = A^T g; a symmetric-kind matrix is its own transpose.
      if (adj->kind == NormalizedAdjacency::Kind::Symmetric) {
        spmm_accumulate(adj->csr, adj->values, g, grad_buf(ix));
      } else {
        spmm_accumulate(adj->csr_t, adj->values_t, g, grad_buf(ix));
      }
    };
  }
  return t;
}

Tensor Tape::feature_matmul(const SparseFeatures& x, Tensor w, const std::vector<uint8_t>* keep) {
  check_owns(w, "feature_matmul");
  const Matrix& wv = value(w.id);
  require_shape(wv.rows == x.cols, "feature_matmul: W row count must equal feature dim");
  if (keep != nullptr && static_cast<int64_t>(keep->size()) != x.cols) {
    throw ShapeError("feature_matmul: mask length must equal feature dim");
  }
  const int64_t k = wv.cols;
  Matrix out(x.rows, k);
  {
    const uint8_t* km = keep ? keep->data() : nullptr;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < x.rows; ++i) {
      real* dst = out.row_ptr(i);
      for (int64_t e = x.csr.row_begin(i); e < x.csr.row_end(i); ++e) {
        const int32_t j = x.csr.col[static_cast<size_t>(e)];
        if (km && !km[j]) continue;
        const real xv = x.vals[static_cast<size_t>(e)];
        const real* wj = wv.row_ptr(j);
        for (int64_t c = 0; c < k; ++c) dst[c] += xv * wj[c];
      }
    }
  }
  Tensor t = push(std::move(out), w.requires_grad(), nullptr);
  if (w.requires_grad()) {
    const int32_t self = t.id, iw = w.id;
    const SparseFeatures* xs = &x;
    std::vector<uint8_t> keep_copy = keep ? *keep : std::vector<uint8_t>{};
    nodes_[static_cast<size_t>(self)].backprop = [this, self, iw, xs,
                                                  keep_copy = std::move(keep_copy)]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      Matrix& dw = grad_buf(iw);
      const uint8_t* km = keep_copy.empty() ? nullptr : keep_copy.data();
      const int64_t k2 = g.cols;
      // dW_j = sum_i x_ij * g_i over the transpose rows; masked features get
      // no gradient because they did not contribute.
#pragma omp parallel for schedule(static)
      for (int64_t j = 0; j < xs->cols; ++j) {
        if (km && !km[j]) continue;
        real* dwj = dw.row_ptr(j);
        for (int64_t e = xs->csr_t.row_begin(j); e < xs->csr_t.row_end(j); ++e) {
          const int32_t i = xs->csr_t.col[static_cast<size_t>(e)];
          const real xv = xs->vals_t[static_cast<size_t>(e)];
          const real* gi = g.row_ptr(i);
          for (int64_t c = 0; c < k2; ++c) dwj[c] += xv * gi[c];
        }
      }
    };
  }
  return t;
}

Tensor Tape::add(Tensor a, Tensor b) {
  check_owns(a, "add");
  check_owns(b, "add");
  const Matrix& av = value(a.id);
  const Matrix& bv = value(b.id);
  require_shape(av.same_shape(bv), "add: shapes disagree");
  Matrix out = av;
  for (int64_t i = 0; i < out.size(); ++i) out.v[static_cast<size_t>(i)] += bv.v[static_cast<size_t>(i)];
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  Tensor t = push(std::move(out), ga || gb, nullptr);
  if (ga || gb) {
    const int32_t self = t.id, ia = a.id, ib = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ia, ib, ga, gb]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      if (ga) emap(grad_buf(ia)) += emap(g);
      if (gb) emap(grad_buf(ib)) += emap(g);
    };
  }
  return t;
}

Tensor Tape::sub(Tensor a, Tensor b) {
  check_owns(a, "sub");
  check_owns(b, "sub");
  const Matrix& av = value(a.id);
  const Matrix& bv = value(b.id);
  require_shape(av.same_shape(bv), "sub: shapes disagree");
  Matrix out = av;
  for (int64_t i = 0; i < out.size(); ++i) out.v[static_cast<size_t>(i)] -= bv.v[static_cast<size_t>(i)];
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  Tensor t = push(std::move(out), ga || gb, nullptr);
  if (ga || gb) {
    const int32_t self = t.id, ia = a.id, ib = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ia, ib, ga, gb]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      if (ga) emap(grad_buf(ia)) += emap(g);
      if (gb) emap(grad_buf(ib)) -= emap(g);
    };
  }
  return t;
}

Tensor Tape::mul(Tensor a, Tensor b) {
  check_owns(a, "mul");
  check_owns(b, "mul");
  const Matrix& av = value(a.id);
  const Matrix& bv = value(b.id);
  require_shape(av.same_shape(bv), "mul: shapes disagree");
  Matrix out = av;
  for (int64_t i = 0; i < out.size(); ++i) out.v[static_cast<size_t>(i)] *= bv.v[static_cast<size_t>(i)];
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  Tensor t = push(std::move(out), ga || gb, nullptr);
  if (ga || gb) {
    const int32_t self = t.id, ia = a.id, ib = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ia, ib, ga, gb]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      if (ga) {
        Matrix& da = grad_buf(ia);
        const Matrix& bval = value(ib);
        for (int64_t i = 0; i < g.size(); ++i)
          da.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * bval.v[static_cast<size_t>(i)];
      }
      if (gb) {
        Matrix& db = grad_buf(ib);
        const Matrix& aval = value(ia);
        for (int64_t i = 0; i < g.size(); ++i)
          db.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * aval.v[static_cast<size_t>(i)];
      }
    };
  }
  return t;
}

Tensor Tape::scale(Tensor a, real c) {
  check_owns(a, "scale");
  Matrix out = value(a.id);
  for (real& x : out.v) x *= c;
  Tensor t = push(std::move(out), a.requires_grad(), nullptr);
  if (a.requires_grad()) {
    const int32_t self = t.id, ia = a.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ia, c]() {
      emap(grad_buf(ia)) += c * emap(nodes_[static_cast<size_t>(self)].grad);
    };
  }
  return t;
}

Tensor Tape::add_bias(Tensor x, Tensor bias) {
  check_owns(x, "add_bias");
  check_owns(bias, "add_bias");
  const Matrix& xv = value(x.id);
  const Matrix& bv = value(bias.id);
  require_shape(bv.rows == 1 && bv.cols == xv.cols, "add_bias: bias must be 1 x cols(x)");
  Matrix out = xv;
  for (int64_t i = 0; i < out.rows; ++i) {
    real* dst = out.row_ptr(i);
    for (int64_t j = 0; j < out.cols; ++j) dst[j] += bv.v[static_cast<size_t>(j)];
  }
  const bool gx = x.requires_grad(), gb = bias.requires_grad();
  Tensor t = push(std::move(out), gx || gb, nullptr);
  if (gx || gb) {
    const int32_t self = t.id, ix = x.id, ib = bias.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix, ib, gx, gb]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      if (gx) emap(grad_buf(ix)) += emap(g);
      if (gb) {
        Matrix& db = grad_buf(ib);
        for (int64_t j = 0; j < g.cols; ++j) {
          real acc = 0;
          for (int64_t i = 0; i < g.rows; ++i) acc += g(i, j);
          db.v[static_cast<size_t>(j)] += acc;
        }
      }
    };
  }
  return t;
}

Tensor Tape::relu(Tensor x) {
  check_owns(x, "relu");
  Matrix out = value(x.id);
  for (real& v : out.v) v = v > 0 ? v : real(0);
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& xv = value(ix);
      Matrix& dx = grad_buf(ix);
      // Subgradient at 0 is 0.
      for (int64_t i = 0; i < g.size(); ++i)
        if (xv.v[static_cast<size_t>(i)] > 0) dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)];
    };
  }
  return t;
}

Tensor Tape::prelu(Tensor x, Tensor slope) {
  check_owns(x, "prelu");
  check_owns(slope, "prelu");
  const Matrix& sv = value(slope.id);
  require_shape(sv.rows == 1 && sv.cols == 1, "prelu: slope must be 1x1");
  const real a = sv.v[0];
  Matrix out = value(x.id);
  for (real& v : out.v) v = v > 0 ? v : a * v;
  const bool gx = x.requires_grad(), gs = slope.requires_grad();
  Tensor t = push(std::move(out), gx || gs, nullptr);
  if (gx || gs) {
    const int32_t self = t.id, ix = x.id, is = slope.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix, is, gx, gs, a]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& xv = value(ix);
      if (gx) {
        Matrix& dx = grad_buf(ix);
        for (int64_t i = 0; i < g.size(); ++i) {
          const real xi = xv.v[static_cast<size_t>(i)];
          dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * (xi > 0 ? real(1) : a);
        }
      }
      if (gs) {
        real acc = 0;
        for (int64_t i = 0; i < g.size(); ++i) {
          const real xi = xv.v[static_cast<size_t>(i)];
          if (xi <= 0) acc += g.v[static_cast<size_t>(i)] * xi;
        }
        grad_buf(is).v[0] += acc;
      }
    };
  }
  return t;
}

Tensor Tape::elu(Tensor x) {
  check_owns(x, "elu");
  Matrix out = value(x.id);
  for (real& v : out.v) v = v > 0 ? v : std::expm1(v);
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& xv = value(ix);
      const Matrix& yv = value(self);
      Matrix& dx = grad_buf(ix);
      for (int64_t i = 0; i < g.size(); ++i) {
        const real xi = xv.v[static_cast<size_t>(i)];
        const real d = xi > 0 ? real(1) : yv.v[static_cast<size_t>(i)] + real(1);  // e^x
        dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * d;
      }
    };
  }
  return t;
}

Tensor Tape::rrelu(Tensor x) {
  check_owns(x, "rrelu");
  Matrix out = value(x.id);
  for (real& v : out.v) v = v > 0 ? v : kRreluSlope * v;
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& xv = value(ix);
      Matrix& dx = grad_buf(ix);
      for (int64_t i = 0; i < g.size(); ++i) {
        const real d = xv.v[static_cast<size_t>(i)] > 0 ? real(1) : kRreluSlope;
        dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * d;
      }
    };
  }
  return t;
}

Tensor Tape::concat_cols(Tensor a, Tensor b) {
  check_owns(a, "concat_cols");
  check_owns(b, "concat_cols");
  const Matrix& av = value(a.id);
  const Matrix& bv = value(b.id);
  require_shape(av.rows == bv.rows, "concat_cols: row counts disagree");
  const int64_t ac = av.cols, bc = bv.cols;  // push() below may reallocate nodes_
  Matrix out(av.rows, ac + bc);
  for (int64_t i = 0; i < out.rows; ++i) {
    std::memcpy(out.row_ptr(i), av.row_ptr(i), sizeof(real) * static_cast<size_t>(ac));
    std::memcpy(out.row_ptr(i) + ac, bv.row_ptr(i), sizeof(real) * static_cast<size_t>(bc));
  }
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  Tensor t = push(std::move(out), ga || gb, nullptr);
  if (ga || gb) {
    const int32_t self = t.id, ia = a.id, ib = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ia, ib, ga, gb, ac, bc]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      if (ga) {
        Matrix& da = grad_buf(ia);
        for (int64_t i = 0; i < g.rows; ++i)
          for (int64_t j = 0; j < ac; ++j) da(i, j) += g(i, j);
      }
      if (gb) {
        Matrix& db = grad_buf(ib);
        for (int64_t i = 0; i < g.rows; ++i)
          for (int64_t j = 0; j < bc; ++j) db(i, j) += g(i, ac + j);
      }
    };
  }
  return t;
}

Tensor Tape::l2_normalize_rows(Tensor x) {
  check_owns(x, "l2_normalize_rows");
  const Matrix& xv = value(x.id);
  Matrix out(xv.rows, xv.cols);
  std::vector<real> norms(static_cast<size_t>(xv.rows));
  for (int64_t i = 0; i < xv.rows; ++i) {
    const real* src = xv.row_ptr(i);
    real n2 = 0;
    for (int64_t j = 0; j < xv.cols; ++j) n2 += src[j] * src[j];
    if (!(n2 > 0) || !std::isfinite(n2)) {
      throw NumericError("l2_normalize_rows: zero or non-finite norm in row " + std::to_string(i) +
                         " (collapsed or diverged embedding)");
    }
    const real n = std::sqrt(n2);
    norms[static_cast<size_t>(i)] = n;
    real* dst = out.row_ptr(i);
    for (int64_t j = 0; j < xv.cols; ++j) dst[j] = src[j] / n;
  }
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix, norms = std::move(norms)]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& y = value(self);
      Matrix& dx = grad_buf(ix);
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < g.rows; ++i) {
        const real* gi = g.row_ptr(i);
        const real* yi = y.row_ptr(i);
        real dot = 0;
        for (int64_t j = 0; j < g.cols; ++j) dot += gi[j] * yi[j];
        const real inv_n = real(1) / norms[static_cast<size_t>(i)];
        real* di = dx.row_ptr(i);
        for (int64_t j = 0; j < g.cols; ++j) di[j] += (gi[j] - yi[j] * dot) * inv_n;
      }
    };
  }
  return t;
}

Tensor Tape::exp_op(Tensor x) {
  check_owns(x, "exp");
  Matrix out = value(x.id);
  for (real& v : out.v) v = std::exp(v);
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& y = value(self);
      Matrix& dx = grad_buf(ix);
      for (int64_t i = 0; i < g.size(); ++i)
        dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * y.v[static_cast<size_t>(i)];
    };
  }
  return t;
}

Tensor Tape::log_op(Tensor x) {
  check_owns(x, "log");
  const Matrix& xv = value(x.id);
  Matrix out = xv;
  for (real& v : out.v) {
    if (!(v > 0)) throw NumericError("log: non-positive value");
    v = std::log(v);
  }
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& xv2 = value(ix);
      Matrix& dx = grad_buf(ix);
      for (int64_t i = 0; i < g.size(); ++i)
        dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] / xv2.v[static_cast<size_t>(i)];
    };
  }
  return t;
}

Tensor Tape::logsumexp_rows(Tensor x) {
  check_owns(x, "logsumexp_rows");
  const Matrix& xv = value(x.id);
  Matrix out(xv.rows, 1);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < xv.rows; ++i) {
    RowCMap row(xv.row_ptr(i), xv.cols);
    const real m = row.maxCoeff();
    const real s = (row - m).exp().sum();
    out.v[static_cast<size_t>(i)] = m + std::log(s);
  }
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& y = value(self);
      const Matrix& xv2 = value(ix);
      Matrix& dx = grad_buf(ix);
#pragma omp parallel for schedule(static)
      for (int64_t i = 0; i < xv2.rows; ++i) {
        const real gi = g.v[static_cast<size_t>(i)];
        const real yi = y.v[static_cast<size_t>(i)];
        RowCMap row(xv2.row_ptr(i), xv2.cols);
        RowMap di(dx.row_ptr(i), xv2.cols);
        di += gi * (row - yi).exp();
      }
    };
  }
  return t;
}

Tensor Tape::logaddexp(Tensor a, Tensor b) {
  check_owns(a, "logaddexp");
  check_owns(b, "logaddexp");
  const Matrix& av = value(a.id);
  const Matrix& bv = value(b.id);
  require_shape(av.same_shape(bv), "logaddexp: shapes disagree");
  Matrix out(av.rows, av.cols);
  for (int64_t i = 0; i < out.size(); ++i) {
    const real x = av.v[static_cast<size_t>(i)];
    const real y = bv.v[static_cast<size_t>(i)];
    const real m = std::max(x, y);
    out.v[static_cast<size_t>(i)] = m + std::log1p(std::exp(std::min(x, y) - m));
  }
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  Tensor t = push(std::move(out), ga || gb, nullptr);
  if (ga || gb) {
    const int32_t self = t.id, ia = a.id, ib = b.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ia, ib, ga, gb]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      const Matrix& av2 = value(ia);
      const Matrix& bv2 = value(ib);
      for (int64_t i = 0; i < g.size(); ++i) {
        const real x = av2.v[static_cast<size_t>(i)];
        const real y = bv2.v[static_cast<size_t>(i)];
        const real wa = real(1) / (real(1) + std::exp(y - x));
        if (ga) grad_buf(ia).v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * wa;
        if (gb) grad_buf(ib).v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * (real(1) - wa);
      }
    };
  }
  return t;
}

Tensor Tape::transpose(Tensor x) {
  check_owns(x, "transpose");
  const Matrix& xv = value(x.id);
  Matrix out(xv.cols, xv.rows);
  emap(out) = emap(xv).transpose();
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      emap(grad_buf(ix)) += emap(nodes_[static_cast<size_t>(self)].grad).transpose();
    };
  }
  return t;
}

Tensor Tape::gram(Tensor x) {
  check_owns(x, "gram");
  const Matrix& xv = value(x.id);
  Matrix out(xv.rows, xv.rows);
  emap(out).noalias() = emap(xv) * emap(xv).transpose();
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      Matrix gs(g.rows, g.cols);
      emap(gs) = emap(g) + emap(g).transpose();
      emap(grad_buf(ix)).noalias() += emap(gs) * emap(value(ix));
    };
  }
  return t;
}

Tensor Tape::take_diagonal(Tensor x) {
  check_owns(x, "take_diagonal");
  const Matrix& xv = value(x.id);
  require_shape(xv.rows == xv.cols, "take_diagonal: matrix must be square");
  Matrix out(xv.rows, 1);
  for (int64_t i = 0; i < xv.rows; ++i) out.v[static_cast<size_t>(i)] = xv(i, i);
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      Matrix& dx = grad_buf(ix);
      for (int64_t i = 0; i < g.rows; ++i) dx(i, i) += g.v[static_cast<size_t>(i)];
    };
  }
  return t;
}

Tensor Tape::mask_diagonal(Tensor x, real fill) {
  check_owns(x, "mask_diagonal");
  const Matrix& xv = value(x.id);
  require_shape(xv.rows == xv.cols, "mask_diagonal: matrix must be square");
  Matrix out = xv;
  for (int64_t i = 0; i < out.rows; ++i) out(i, i) = fill;
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const Matrix& g = nodes_[static_cast<size_t>(self)].grad;
      Matrix& dx = grad_buf(ix);
      for (int64_t i = 0; i < g.rows; ++i) {
        const real* gi = g.row_ptr(i);
        real* di = dx.row_ptr(i);
        for (int64_t j = 0; j < g.cols; ++j) {
          if (j != i) di[j] += gi[j];
        }
      }
    };
  }
  return t;
}

Tensor Tape::sum_all(Tensor x) {
  check_owns(x, "sum_all");
  const Matrix& xv = value(x.id);
  real acc = 0;
  for (real v : xv.v) acc += v;  // fixed row-major reduction order
  Matrix out(1, 1);
  out.v[0] = acc;
  Tensor t = push(std::move(out), x.requires_grad(), nullptr);
  if (x.requires_grad()) {
    const int32_t self = t.id, ix = x.id;
    nodes_[static_cast<size_t>(self)].backprop = [this, self, ix]() {
      const real g = nodes_[static_cast<size_t>(self)].grad.v[0];
      Matrix& dx = grad_buf(ix);
      for (real& v : dx.v) v += g;
    };
  }
  return t;
}

Tensor Tape::mean_all(Tensor x) {
  check_owns(x, "mean_all");
  const real inv = real(1) / static_cast<real>(value(x.id).size());
  return scale(sum_all(x), inv);
}

std::vector<Matrix> Tape::backward(Tensor loss, const std::vector<Tensor>& wrt) {
  check_owns(loss, "backward");
  if (finished_) throw AutodiffError("backward: tape already consumed");
  const Matrix& lv = value(loss.id);
  require_shape(lv.rows == 1 && lv.cols == 1, "backward: loss must be a 1x1 scalar");
  if (!loss.requires_grad()) {
    throw AutodiffError("backward on detached tensor: loss has no path to a requires_grad leaf");
  }
  grad_buf(loss.id).v[0] = fault_injection_enabled ? real(1) + real(1e-3) : real(1);
  for (int32_t i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad_live && n.backprop) n.backprop();
  }
  std::vector<Matrix> out;
  out.reserve(wrt.size());
  for (const Tensor& t : wrt) {
    check_owns(t, "backward(wrt)");
    Node& n = nodes_[static_cast<size_t>(t.id)];
    if (n.grad_live) {
      out.push_back(std::move(n.grad));
    } else {
      out.push_back(Matrix::zeros(n.value.rows, n.value.cols));
    }
  }
  nodes_.clear();
  finished_ = true;
  return out;
}

double grad_check(const TensorFn& f, const Matrix& theta, double h) {
  auto eval = [&](const Matrix& m) -> double {
    Tape tape;
    Tensor leaf = tape.leaf(m, false);
    Tensor loss = f(tape, leaf);
    require_shape(loss.rows() == 1 && loss.cols() == 1, "grad_check: f must be scalar-valued");
    return static_cast<double>(loss.value().v[0]);
  };
  // Non-determinism would invalidate central differences.
  const double v1 = eval(theta);
  const double v2 = eval(theta);
  if (!(v1 == v2)) {
    throw NumericError("grad_check: f is not deterministic (two evaluations disagree)");
  }

  Matrix analytic;
  {
    Tape tape;
    Tensor leaf = tape.leaf(theta, true);
    Tensor loss = f(tape, leaf);
    auto grads = tape.backward(loss, {leaf});
    analytic = std::move(grads[0]);
  }

  double worst = 0.0;
  Matrix probe = theta;
  for (int64_t i = 0; i < theta.size(); ++i) {
    const real orig = probe.v[static_cast<size_t>(i)];
    probe.v[static_cast<size_t>(i)] = orig + static_cast<real>(h);
    const double fp = eval(probe);
    probe.v[static_cast<size_t>(i)] = orig - static_cast<real>(h);
    const double fm = eval(probe);
    probe.v[static_cast<size_t>(i)] = orig;
    const double central = (fp - fm) / (2.0 * h);
    const double err = std::abs(static_cast<double>(analytic.v[static_cast<size_t>(i)]) - central) /
                       std::max(1.0, std::abs(central));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace grace
