#pragma once

// Single-sample forward/backward layer operations. Feature maps are
// [channels, height, width]; convolutions are valid cross-correlations with
// stride 1; every pooling layer is 2x2 with stride 2.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ecp/tensor.hpp"

namespace ecp {

/// Position inside a 2x2 pooling window, numbered row-major:
/// 0 -> (0,0), 1 -> (0,1), 2 -> (1,0), 3 -> (1,1).
class ModeK {
 public:
  explicit ModeK(int k);

  int value() const noexcept { return k_; }
  std::size_t row_offset() const noexcept { return static_cast<std::size_t>(k_ / 2); }
  std::size_t col_offset() const noexcept { return static_cast<std::size_t>(k_ % 2); }

  static std::array<ModeK, 4> all() { return {ModeK(0), ModeK(1), ModeK(2), ModeK(3)}; }

  friend bool operator==(ModeK, ModeK) = default;

 private:
  int k_;
};

struct ConvFilter {
  Tensor weights;  // [out, in, kh, kw]
  Tensor bias;     // [out]

  std::size_t out_channels() const { return weights.shape()[0]; }
  std::size_t in_channels() const { return weights.shape()[1]; }
  std::size_t kernel_h() const { return weights.shape()[2]; }
  std::size_t kernel_w() const { return weights.shape()[3]; }

  /// Throws unless weights are rank 4 and bias is [out].
  void validate() const;
};

struct ConvGrads {
  Tensor dx;
  Tensor dweights;
  Tensor dbias;
};

/// Everything a convolution backward needs. For the fused easy convolution
/// `stride` is 2 and (row0, col0) is the mode offset; the conventional
/// layer uses stride 1 at the origin.
struct ConvCache {
  Shape input_shape;
  ConvFilter filter;
  Tensor columns;  // [in*kh*kw, positions]
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t stride = 1;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

std::pair<Tensor, ConvCache> conv2d_forward(const Tensor& x, const ConvFilter& f);

/// Exact gradients of sum(dy * y). `input_grad = false` leaves dx empty.
ConvGrads conv2d_backward(const ConvCache& cache, const Tensor& dy, bool input_grad = true);

/// Convolution evaluated only at the windows that mode-k random pooling will
/// keep: y[c,i,j] = conv(x,f)[c, 2i + row_off, 2j + col_off]. The discarded
/// three quarters of positions are never computed.
std::pair<Tensor, ConvCache> easy_conv_fused_forward(const Tensor& x, const ConvFilter& f,
                                                     ModeK k);

ConvGrads easy_conv_fused_backward(const ConvCache& cache, const Tensor& dy,
                                   bool input_grad = true);

/// Fused result restored to the full convolution shape by copying each value
/// into the other three cells of its 2x2 block. Test reference only.
Tensor easy_conv_padded_forward(const Tensor& x, const ConvFilter& f, ModeK k);

enum class PoolKind { Max, Avg };

struct PoolCache {
  PoolKind kind = PoolKind::Max;
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // flat input index per output (max only)
};

/// Ties resolve to the smallest row-major index within the block.
std::pair<Tensor, PoolCache> max_pool_forward(const Tensor& x);
std::pair<Tensor, PoolCache> avg_pool_forward(const Tensor& x);
Tensor pool_backward(const PoolCache& cache, const Tensor& dy);

Tensor random_pool_forward(const Tensor& x, ModeK k);
Tensor random_pool_backward(const Tensor& dy, ModeK k, const Shape& input_shape);

struct ReluCache {
  Tensor input;
};

std::pair<Tensor, ReluCache> relu_forward(const Tensor& x);
/// Gradient at exactly zero is zero.
Tensor relu_backward(const ReluCache& cache, const Tensor& dy);

struct DenseCache {
  Tensor input;
  Tensor weights;
};

struct DenseGrads {
  Tensor dx;
  Tensor dweights;
  Tensor dbias;
};

/// y = weights * x + bias. Any-rank input is flattened row-major.
std::pair<Tensor, DenseCache> dense_forward(const Tensor& x, const Tensor& weights,
                                            const Tensor& bias);
/// dx has the original (unflattened) input shape.
DenseGrads dense_backward(const DenseCache& cache, const Tensor& dy);

enum class Reduction { Mean, Sum };

struct SoftmaxLoss {
  double loss;      // mean of -log p[label] over the batch
  Tensor dlogits;   // (p - onehot) / B for Mean, (p - onehot) for Sum
  Tensor probs;
};

/// logits [B, classes]; labels in [0, classes).
SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                  Reduction reduction = Reduction::Mean);

}  // namespace ecp
