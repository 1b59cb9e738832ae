#pragma once

#include <cstdint>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace grace {

#ifdef GRACE_REAL32
using real = float;
#else
using real = double;
#endif

/// Allocator pinning value buffers to one alignment. Vectorized kernels pick
/// code paths by pointer alignment; a fixed alignment keeps reduction orders
/// identical across allocations, which bitwise reproducibility depends on.
template <typename T, std::size_t Alignment>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Alignment>;
  };
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Alignment>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Alignment)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(Alignment));
  }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Alignment>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U, Alignment>&) const {
    return false;
  }
};

using RealBuffer = std::vector<real, AlignedAllocator<real, 64>>;

// Error taxonomy mirrored by the CLI exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of reals. The single value carrier for features,
/// embeddings, weights and gradients.
struct Matrix {
  int64_t rows = 0;
  int64_t cols = 0;
  RealBuffer v;

  Matrix() = default;
  Matrix(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), real(0)) {}

  static Matrix zeros(int64_t r, int64_t c) { return Matrix(r, c); }
  static Matrix full(int64_t r, int64_t c, real value) {
    Matrix m(r, c);
    std::fill(m.v.begin(), m.v.end(), value);
    return m;
  }
  static Matrix identity(int64_t n) {
    Matrix m(n, n);
    for (int64_t i = 0; i < n; ++i) m(i, i) = real(1);
    return m;
  }

  real& operator()(int64_t i, int64_t j) { return v[static_cast<size_t>(i * cols + j)]; }
  real operator()(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * cols + j)]; }

  real* row_ptr(int64_t i) { return v.data() + i * cols; }
  const real* row_ptr(int64_t i) const { return v.data() + i * cols; }

  int64_t size() const { return rows * cols; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace grace
