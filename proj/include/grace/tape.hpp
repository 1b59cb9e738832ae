#pragma once

#include <functional>
#include <string>
#include <vector>

#include "grace/common.hpp"
#include "grace/graph.hpp"

namespace grace {

struct AutodiffError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

/// Handle to a node on the active tape.
struct Tensor {
  Tape* tape = nullptr;
  int32_t id = -1;

  int64_t rows() const;
  int64_t cols() const;
  const Matrix& value() const;
  bool requires_grad() const;
  /// Raises NumericError if the value holds NaN or Inf.
  void ensure_finite(const std::string& what) const;
};

/// Append-only record of primitive operations. Creation order is a
/// topological order, so the backward pass is a single reverse sweep that
/// visits each node exactly once. A tape is single-threaded; dense kernels
/// inside the ops may parallelize under a fixed reduction order, so the
/// forward pass is bitwise deterministic for a fixed thread count.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value, bool requires_grad);
  Tensor constant(Matrix value) { return leaf(std::move(value), false); }

  // --- primitive operations -------------------------------------------------
  Tensor matmul(Tensor a, Tensor b);
  /// Sparse-dense product. The adjacency must outlive the tape.
  Tensor spmm(const NormalizedAdjacency& a, Tensor x);
  /// (X o mask) * W for a constant sparse feature matrix: masked feature
  /// dimensions are skipped, which is identical to zeroing those columns of
  /// X (or rows of W). keep may be null for the unmasked product. X must
  /// outlive the tape.
  Tensor feature_matmul(const SparseFeatures& x, Tensor w, const std::vector<uint8_t>* keep);
  Tensor add(Tensor a, Tensor b);
  Tensor sub(Tensor a, Tensor b);
  Tensor mul(Tensor a, Tensor b);  // elementwise
  Tensor scale(Tensor a, real c);
  Tensor add_bias(Tensor x, Tensor bias);  // bias is 1 x C, broadcast over rows
  Tensor relu(Tensor x);
  Tensor prelu(Tensor x, Tensor slope);  // slope is a learnable 1x1 scalar
  Tensor elu(Tensor x);
  Tensor rrelu(Tensor x);  // deterministic evaluation form, slope = midpoint of [1/8, 1/3]
  Tensor concat_cols(Tensor a, Tensor b);
  Tensor l2_normalize_rows(Tensor x);
  Tensor exp_op(Tensor x);
  Tensor log_op(Tensor x);
  Tensor logsumexp_rows(Tensor x);        // N x 1, overflow-safe by max-shift
  Tensor logaddexp(Tensor a, Tensor b);   // elementwise stable log(e^a + e^b)
  Tensor transpose(Tensor x);
  Tensor gram(Tensor x);                  // x * x^T with fused symmetric backward
  Tensor take_diagonal(Tensor x);         // N x 1
  Tensor mask_diagonal(Tensor x, real fill);
  Tensor sum_all(Tensor x);               // 1 x 1, fixed reduction order
  Tensor mean_all(Tensor x);

  /// Reverse sweep from `loss` (must be 1x1 and on this tape). Returns the
  /// gradients for `wrt` (zero matrices where no gradient flowed), then
  /// clears the tape.
  std::vector<Matrix> backward(Tensor loss, const std::vector<Tensor>& wrt);

  const Matrix& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool node_requires_grad(int32_t id) const {
    return nodes_[static_cast<size_t>(id)].requires_grad;
  }
  size_t size() const { return nodes_.size(); }

  static constexpr real kMaskFill = real(-1e30);
  static constexpr real kRreluSlope = real((1.0 / 8.0 + 1.0 / 3.0) / 2.0);

  /// Test hook: when set, backward seeds the loss gradient with 1 + 1e-3
  /// instead of 1, corrupting every analytic gradient by 0.1%. Exists so the
  /// finite-difference harness can prove it catches wrong gradients.
  static bool fault_injection_enabled;

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool grad_live = false;
    std::function<void()> backprop;  // null for leaves and no-grad nodes
  };

  Tensor push(Matrix value, bool requires_grad, std::function<void()> backprop);
  Matrix& grad_buf(int32_t id);
  void check_owns(Tensor t, const char* op) const;

  std::vector<Node> nodes_;
  bool finished_ = false;
};

/// Independent finite-difference oracle. Builds the scalar `f(theta)` through
/// fresh tapes, compares the analytic gradient against central differences
/// with step h, and returns the max over coordinates of
/// |analytic - central| / max(1, |central|). Detects a non-deterministic f
/// by double evaluation.
using TensorFn = std::function<Tensor(Tape&, Tensor)>;
double grad_check(const TensorFn& f, const Matrix& theta, double h = 1e-5);

void ensure_finite(const Matrix& m, const std::string& what);

}  // namespace grace
