#pragma once

// Matrix product whose rows are computed independently of their position:
// every entry is the same k-ordered sum of products (partial sums are
// stored and reloaded exactly between depth blocks, and padded rows go
// through the same kernel), so reordering the rows of the left operand
// reorders the result bit for bit.

#include <Eigen/Dense>

#include <algorithm>
#include <vector>

namespace pipn::ad {

namespace detail {

#if defined(__AVX512F__)
inline constexpr int kVecWidth = 8;
inline constexpr int kVecPerTile = 3;
inline constexpr int kTileCols = 8;
#elif defined(__AVX__)
inline constexpr int kVecWidth = 4;
inline constexpr int kVecPerTile = 2;
inline constexpr int kTileCols = 6;
#else
inline constexpr int kVecWidth = 2;
inline constexpr int kVecPerTile = 3;
inline constexpr int kTileCols = 4;
#endif
inline constexpr Eigen::Index kTileRows = kVecWidth * kVecPerTile;
inline constexpr Eigen::Index kDepthBlock = 256;
inline constexpr Eigen::Index kRowBlock = 192;  // multiple of kTileRows

typedef double VecD __attribute__((vector_size(kVecWidth * sizeof(double))));
typedef double VecDu __attribute__((vector_size(kVecWidth * sizeof(double)), aligned(8), may_alias));

/// c[tile] += a_panel * b_panel for one kTileRows x kTileCols tile.
inline void mm_tile(const double* __restrict ap, const double* __restrict bp, Eigen::Index kc, double* __restrict c,
                    Eigen::Index ldc) {
  VecD acc[kTileCols][kVecPerTile];
  for (int j = 0; j < kTileCols; ++j) {
    for (int r = 0; r < kVecPerTile; ++r) acc[j][r] = *reinterpret_cast<const VecDu*>(c + j * ldc + r * kVecWidth);
  }
  for (Eigen::Index k = 0; k < kc; ++k) {
    VecD a[kVecPerTile];
    for (int r = 0; r < kVecPerTile; ++r) a[r] = *reinterpret_cast<const VecDu*>(ap + kTileRows * k + r * kVecWidth);
    for (int j = 0; j < kTileCols; ++j) {
      const double b = bp[kTileCols * k + j];
      for (int r = 0; r < kVecPerTile; ++r) acc[j][r] += a[r] * b;
    }
  }
  for (int j = 0; j < kTileCols; ++j) {
    for (int r = 0; r < kVecPerTile; ++r) *reinterpret_cast<VecDu*>(c + j * ldc + r * kVecWidth) = acc[j][r];
  }
}

template <class Scalar>
void mm_tile(const Scalar* __restrict ap, const Scalar* __restrict bp, Eigen::Index kc, Scalar* __restrict c,
             Eigen::Index ldc) {
  Scalar acc[kTileCols][kTileRows];
  for (int j = 0; j < kTileCols; ++j) {
    for (Eigen::Index r = 0; r < kTileRows; ++r) acc[j][r] = c[j * ldc + r];
  }
  for (Eigen::Index k = 0; k < kc; ++k) {
    for (int j = 0; j < kTileCols; ++j) {
      const Scalar b = bp[kTileCols * k + j];
      for (Eigen::Index r = 0; r < kTileRows; ++r) acc[j][r] += ap[kTileRows * k + r] * b;
    }
  }
  for (int j = 0; j < kTileCols; ++j) {
    for (Eigen::Index r = 0; r < kTileRows; ++r) c[j * ldc + r] = acc[j][r];
  }
}

}  // namespace detail

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> row_stable_matmul(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& a,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& b) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using detail::kDepthBlock;
  using detail::kTileCols;
  using detail::kTileRows;
  const Eigen::Index n = a.rows(), depth = a.cols(), m = b.cols();
  if (n == 0 || m == 0 || depth == 0) return Matrix::Zero(n, m);
  const Eigen::Index np = (n + kTileRows - 1) / kTileRows * kTileRows;
  const Eigen::Index mp = (m + kTileCols - 1) / kTileCols * kTileCols;
  Matrix cp = Matrix::Zero(np, mp);
  std::vector<Scalar> apack(static_cast<std::size_t>(np * std::min(depth, kDepthBlock)));
  std::vector<Scalar> bpack(static_cast<std::size_t>(mp * std::min(depth, kDepthBlock)));
  for (Eigen::Index k0 = 0; k0 < depth; k0 += kDepthBlock) {
    const Eigen::Index kc = std::min(kDepthBlock, depth - k0);
    for (Eigen::Index j0 = 0; j0 < mp; j0 += kTileCols) {
      Scalar* dst = bpack.data() + j0 * kc;
      for (Eigen::Index k = 0; k < kc; ++k) {
        for (Eigen::Index j = 0; j < kTileCols; ++j) {
          dst[k * kTileCols + j] = j0 + j < m ? b(k0 + k, j0 + j) : Scalar(0);
        }
      }
    }
    for (Eigen::Index i0 = 0; i0 < np; i0 += kTileRows) {
      Scalar* dst = apack.data() + i0 * kc;
      for (Eigen::Index k = 0; k < kc; ++k) {
        for (Eigen::Index r = 0; r < kTileRows; ++r) {
          dst[k * kTileRows + r] = i0 + r < n ? a(i0 + r, k0 + k) : Scalar(0);
        }
      }
    }
    for (Eigen::Index ib = 0; ib < np; ib += detail::kRowBlock) {
      const Eigen::Index ie = std::min(np, ib + detail::kRowBlock);
      for (Eigen::Index j0 = 0; j0 < mp; j0 += kTileCols) {
        for (Eigen::Index i0 = ib; i0 < ie; i0 += kTileRows) {
          detail::mm_tile(apack.data() + i0 * kc, bpack.data() + j0 * kc, kc, cp.data() + j0 * np + i0, np);
        }
      }
    }
  }
  return cp.topLeftCorner(n, m);
}

}  // namespace pipn::ad
