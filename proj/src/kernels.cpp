#include "kernels.hpp"

#include <algorithm>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "ecp/mac_counter.hpp"

namespace ecp::kernels {

namespace {

// Eight independent lanes reduced pairwise at the end. The order is fixed in
// source, so results do not depend on what the vectorizer does.
double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
  constexpr std::size_t kLanes = 8;
  double lane[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lane[l] += a[i + l] * b[i + l];
  for (; i < n; ++i) lane[0] += a[i] * b[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

void axpy(double alpha, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

void im2col(const double* x, const ConvDims& d, const Grid& g, double* cols, std::size_t ld) {
  const std::size_t P = ld != 0 ? ld : g.positions();
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    const double* plane = x + c * d.height * d.width;
    for (std::size_t u = 0; u < d.kernel_h; ++u) {
      for (std::size_t v = 0; v < d.kernel_w; ++v) {
        double* row = cols + ((c * d.kernel_h + u) * d.kernel_w + v) * P;
        for (std::size_t i = 0; i < g.rows; ++i) {
          const double* src = plane + (g.row0 + g.stride * i + u) * d.width + g.col0 + v;
          double* dst = row + i * g.cols;
          if (g.stride == 1) {
            std::copy(src, src + g.cols, dst);
          } else {
            for (std::size_t j = 0; j < g.cols; ++j) dst[j] = src[j * g.stride];
          }
        }
      }
    }
  }
}

void col2im_add(const double* dcols, const ConvDims& d, const Grid& g, double* dx) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < d.in_channels; ++c) {
    double* plane = dx + c * d.height * d.width;
    for (std::size_t u = 0; u < d.kernel_h; ++u) {
      for (std::size_t v = 0; v < d.kernel_w; ++v) {
        const double* row = dcols + ((c * d.kernel_h + u) * d.kernel_w + v) * P;
        for (std::size_t i = 0; i < g.rows; ++i) {
          double* dst = plane + (g.row0 + g.stride * i + u) * d.width + g.col0 + v;
          const double* src = row + i * g.cols;
          for (std::size_t j = 0; j < g.cols; ++j) dst[j * g.stride] += src[j];
        }
      }
    }
  }
}

namespace {

constexpr std::size_t kRows = 4;   // output rows per register tile
constexpr std::size_t kCols = 8;   // output columns per register tile
constexpr std::size_t kLanes = 8;  // partial sums per reduction

// C[r][c] = init[r] + sum_k At[k][r] * B[k][c], At given column-major in r.
// Every element accumulates sequentially over k, whatever tile it falls in.
template <std::size_t MR, std::size_t NR>
void tile_nn(const double* a, std::size_t lda, const double* b,
             std::size_t ldb, const double* init, double* c, std::size_t ldc, std::size_t K) {
  double acc[MR][NR];
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) acc[r][j] = init ? init[r] : 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double* brow = b + k * ldb;
#pragma GCC unroll 8
    for (std::size_t r = 0; r < MR; ++r) {
      const double w = a[k * lda + r];
#pragma GCC unroll 16
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += w * brow[j];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) c[r * ldc + j] = acc[r][j];
}

void edge_nn(const double* a, std::size_t lda, const double* b,
             std::size_t ldb, const double* init, double* c, std::size_t ldc, std::size_t rows,
             std::size_t cols, std::size_t K) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = init ? init[r] : 0.0;
      for (std::size_t k = 0; k < K; ++k) acc += a[k * lda + r] * b[k * ldb + j];
      c[r * ldc + j] = acc;
    }
  }
}

// C[M][N] = init + At^T * B for At [K][M] and B [K][N].
void gemm_tn(const double* a, const double* b, const double* init, double* c, std::size_t M,
             std::size_t N, std::size_t K) {
  std::size_t m = 0;
  auto block = [&](auto rows_tag) {
    constexpr std::size_t MR = decltype(rows_tag)::value;
    const double* ablk = a + m;
    const double* iblk = init ? init + m : nullptr;
    std::size_t n = 0;
    for (; n + 2 * kCols <= N; n += 2 * kCols)
      tile_nn<MR, 2 * kCols>(ablk, M, b + n, N, iblk, c + m * N + n, N, K);
    for (; n + kCols <= N; n += kCols)
      tile_nn<MR, kCols>(ablk, M, b + n, N, iblk, c + m * N + n, N, K);
    if (n < N) edge_nn(ablk, M, b + n, N, iblk, c + m * N + n, N, MR, N - n, K);
  };
  for (; m + 2 * kRows <= M; m += 2 * kRows) block(std::integral_constant<std::size_t, 2 * kRows>{});
  for (; m + kRows <= M; m += kRows) block(std::integral_constant<std::size_t, kRows>{});
  if (m < M) edge_nn(a + m, M, b, N, init ? init + m : nullptr, c + m * N, N, M - m, N, K);
}

// G[m][k] += sum_p A[m][p] * B[k][p] for A [M][P], B [K][P].
void gemm_nt_acc(const double* a, const double* b, double* g, std::size_t M, std::size_t K,
                 std::size_t P) {
  const std::size_t p_main = P - P % kLanes;
  for (std::size_t m = 0; m < M; m += kRows) {
    const std::size_t rows = std::min(kRows, M - m);
    for (std::size_t k = 0; k < K; k += kRows) {
      const std::size_t cols = std::min(kRows, K - k);
      double lane[kRows][kRows][kLanes] = {};
      for (std::size_t p = 0; p < p_main; p += kLanes) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* ar = a + (m + r) * P + p;
          for (std::size_t q = 0; q < cols; ++q) {
            const double* bq = b + (k + q) * P + p;
            for (std::size_t l = 0; l < kLanes; ++l) lane[r][q][l] += ar[l] * bq[l];
          }
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t q = 0; q < cols; ++q) {
          const double* L = lane[r][q];
          double s = ((L[0] + L[1]) + (L[2] + L[3])) + ((L[4] + L[5]) + (L[6] + L[7]));
          for (std::size_t p = p_main; p < P; ++p) s += a[(m + r) * P + p] * b[(k + q) * P + p];
          g[(m + r) * K + k + q] += s;
        }
      }
    }
  }
}

}  // namespace

void conv_forward(const double* cols, const double* weights, const double* bias,
                  const ConvDims& d, std::size_t positions, double* y) {
  const std::size_t K = d.patch(), M = d.out_channels;
  thread_local std::vector<double> packed;
  packed.resize(K * M);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t k = 0; k < K; ++k) packed[k * M + m] = weights[m * K + k];
  gemm_tn(packed.data(), cols, bias, y, M, positions, K);
  record_macs(MacKind::ConvForward,
              static_cast<std::uint64_t>(d.out_channels) * K * positions);
}

void conv_backward(const double* cols, const double* weights, const double* dy,
                   const ConvDims& d, std::size_t positions, double* dweights,
                   double* dbias, double* dcols) {
  const std::size_t K = d.patch();
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    const double* g = dy + o * positions;
    double acc = 0.0;
    for (std::size_t p = 0; p < positions; ++p) acc += g[p];
    dbias[o] += acc;
  }
  gemm_nt_acc(dy, cols, dweights, d.out_channels, K, positions);
  std::uint64_t macs = static_cast<std::uint64_t>(d.out_channels) * K * positions;
  if (dcols != nullptr) {
    gemm_tn(weights, dy, nullptr, dcols, K, positions, d.out_channels);
    macs *= 2;
  }
  record_macs(MacKind::ConvBackward, macs);
}

void dense_forward(const double* x, const double* weights, const double* bias,
                   std::size_t in, std::size_t out, double* y) {
  for (std::size_t o = 0; o < out; ++o) y[o] = bias[o] + dot(weights + o * in, x, in);
  record_macs(MacKind::DenseForward, static_cast<std::uint64_t>(in) * out);
}

void dense_backward(const double* x, const double* weights, const double* dy,
                    std::size_t in, std::size_t out, double* dweights, double* dbias,
                    double* dx) {
  std::uint64_t macs = static_cast<std::uint64_t>(in) * out;
  for (std::size_t o = 0; o < out; ++o) {
    dbias[o] += dy[o];
    axpy(dy[o], x, dweights + o * in, in);
  }
  if (dx != nullptr) {
    std::fill(dx, dx + in, 0.0);
    for (std::size_t o = 0; o < out; ++o) axpy(dy[o], weights + o * in, dx, in);
    macs *= 2;
  }
  record_macs(MacKind::DenseBackward, macs);
}

}  // namespace ecp::kernels
