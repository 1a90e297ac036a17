#pragma once

// Raw-pointer compute kernels shared by the public layer API and the network
// trainer. Callers own all buffers and have validated shapes.

#include <cstddef>

namespace ecp::kernels {

/// Output positions a convolution evaluates: rows x cols windows whose
/// top-left input pixel is (row0 + stride*i, col0 + stride*j).
struct Grid {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t stride = 1;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t positions() const noexcept { return rows * cols; }
};

struct ConvDims {
  std::size_t in_channels;
  std::size_t height;
  std::size_t width;
  std::size_t out_channels;
  std::size_t kernel_h;
  std::size_t kernel_w;

  std::size_t patch() const noexcept { return in_channels * kernel_h * kernel_w; }
};

/// cols[(c*kh + u)*kw + v][p] = x[c][row(p) + u][col(p) + v]. Rows of cols are
/// `ld` apart (0 means g.positions()), so several images can share one matrix.
void im2col(const double* x, const ConvDims& d, const Grid& g, double* cols, std::size_t ld = 0);

/// Adjoint of im2col: dx += scatter(dcols). dx must be zeroed by the caller.
void col2im_add(const double* dcols, const ConvDims& d, const Grid& g, double* dx);

/// y[o][p] = bias[o] + sum_k w[o][k] * cols[k][p]; records forward MACs.
void conv_forward(const double* cols, const double* weights, const double* bias,
                  const ConvDims& d, std::size_t positions, double* y);

/// dweights += dy * cols^T, dbias += rowsum(dy); optionally dcols = w^T * dy.
/// Records backward MACs.
void conv_backward(const double* cols, const double* weights, const double* dy,
                   const ConvDims& d, std::size_t positions, double* dweights,
                   double* dbias, double* dcols);

/// y = w x + b for w [out, in].
void dense_forward(const double* x, const double* weights, const double* bias,
                   std::size_t in, std::size_t out, double* y);

/// dweights += dy x^T, dbias += dy, and dx = w^T dy when dx is non-null.
void dense_backward(const double* x, const double* weights, const double* dy,
                    std::size_t in, std::size_t out, double* dweights, double* dbias,
                    double* dx);

}  // namespace ecp::kernels
