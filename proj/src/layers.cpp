#include "ecp/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "kernels.hpp"

namespace ecp {

ModeK::ModeK(int k) : k_(k) {
  if (k < 0 || k > 3) throw std::invalid_argument("mode k must be in 0..3, got " + std::to_string(k));
}

void ConvFilter::validate() const {
  if (weights.shape().rank() != 4)
    throw std::invalid_argument("conv weights must be [out,in,kh,kw], got " +
                                weights.shape().to_string());
  if (bias.shape() != Shape{weights.shape()[0]})
    throw std::invalid_argument("conv bias must be [" + std::to_string(weights.shape()[0]) +
                                "], got " + bias.shape().to_string());
}

namespace {

struct FeatureDims {
  std::size_t channels, height, width;
};

FeatureDims feature_dims(const Tensor& x, const char* what) {
  if (x.shape().rank() != 3)
    throw std::invalid_argument(std::string(what) + ": expected [C,H,W], got " +
                                x.shape().to_string());
  return {x.shape()[0], x.shape()[1], x.shape()[2]};
}

kernels::ConvDims conv_dims(const Tensor& x, const ConvFilter& f, const char* what) {
  f.validate();
  const auto [c, h, w] = feature_dims(x, what);
  if (c != f.in_channels())
    throw std::invalid_argument(std::string(what) + ": input has " + std::to_string(c) +
                                " channels, filter expects " + std::to_string(f.in_channels()));
  if (h < f.kernel_h() || w < f.kernel_w())
    throw std::invalid_argument(std::string(what) + ": input " + x.shape().to_string() +
                                " is smaller than the kernel");
  return {c, h, w, f.out_channels(), f.kernel_h(), f.kernel_w()};
}

std::pair<Tensor, ConvCache> conv_on_grid(const Tensor& x, const ConvFilter& f,
                                          const kernels::ConvDims& d, const kernels::Grid& g) {
  const std::size_t P = g.positions();
  ConvCache cache{x.shape(), f, Tensor::zeros(Shape{d.patch(), P}),
                  g.row0,    g.col0, g.stride, g.rows, g.cols};
  Tensor y = Tensor::zeros(Shape{d.out_channels, g.rows, g.cols});
  kernels::im2col(x.data().data(), d, g, cache.columns.data().data());
  kernels::conv_forward(cache.columns.data().data(), f.weights.data().data(),
                        f.bias.data().data(), d, P, y.data().data());
  return {std::move(y), std::move(cache)};
}

ConvGrads conv_backward_on_grid(const ConvCache& cache, const Tensor& dy, bool input_grad) {
  const Shape expected{cache.filter.out_channels(), cache.out_h, cache.out_w};
  if (dy.shape() != expected)
    throw std::invalid_argument("conv backward: dy shape " + dy.shape().to_string() +
                                " does not match output shape " + expected.to_string());
  const kernels::ConvDims d{cache.input_shape[0],         cache.input_shape[1],
                            cache.input_shape[2],         cache.filter.out_channels(),
                            cache.filter.kernel_h(),      cache.filter.kernel_w()};
  const kernels::Grid g{cache.row0, cache.col0, cache.stride, cache.out_h, cache.out_w};
  const std::size_t P = g.positions();

  ConvGrads grads{Tensor{}, Tensor::zeros(cache.filter.weights.shape()),
                  Tensor::zeros(cache.filter.bias.shape())};
  std::vector<double> dcols;
  if (input_grad) dcols.resize(d.patch() * P);
  kernels::conv_backward(cache.columns.data().data(), cache.filter.weights.data().data(),
                         dy.data().data(), d, P, grads.dweights.data().data(),
                         grads.dbias.data().data(), input_grad ? dcols.data() : nullptr);
  if (input_grad) {
    grads.dx = Tensor::zeros(cache.input_shape);
    kernels::col2im_add(dcols.data(), d, g, grads.dx.data().data());
  }
  return grads;
}

void require_even(const Shape& s, const char* what) {
  if (s[1] % 2 != 0 || s[2] % 2 != 0)
    throw std::invalid_argument(std::string(what) + ": spatial extent " + s.to_string() +
                                " must be even for 2x2 stride-2 pooling");
}

}  // namespace

std::pair<Tensor, ConvCache> conv2d_forward(const Tensor& x, const ConvFilter& f) {
  const auto d = conv_dims(x, f, "conv2d_forward");
  const kernels::Grid g{0, 0, 1, d.height - d.kernel_h + 1, d.width - d.kernel_w + 1};
  return conv_on_grid(x, f, d, g);
}

ConvGrads conv2d_backward(const ConvCache& cache, const Tensor& dy, bool input_grad) {
  return conv_backward_on_grid(cache, dy, input_grad);
}

std::pair<Tensor, ConvCache> easy_conv_fused_forward(const Tensor& x, const ConvFilter& f,
                                                     ModeK k) {
  const auto d = conv_dims(x, f, "easy_conv_fused_forward");
  const std::size_t out_h = d.height - d.kernel_h + 1;
  const std::size_t out_w = d.width - d.kernel_w + 1;
  if (out_h % 2 != 0 || out_w % 2 != 0)
    throw std::invalid_argument("easy_conv_fused_forward: convolution output " +
                                std::to_string(out_h) + "x" + std::to_string(out_w) +
                                " must have even extents");
  const kernels::Grid g{k.row_offset(), k.col_offset(), 2, out_h / 2, out_w / 2};
  return conv_on_grid(x, f, d, g);
}

ConvGrads easy_conv_fused_backward(const ConvCache& cache, const Tensor& dy, bool input_grad) {
  return conv_backward_on_grid(cache, dy, input_grad);
}

Tensor easy_conv_padded_forward(const Tensor& x, const ConvFilter& f, ModeK k) {
  const Tensor fused = easy_conv_fused_forward(x, f, k).first;
  const std::size_t C = fused.shape()[0], h = fused.shape()[1], w = fused.shape()[2];
  Tensor full = Tensor::zeros(Shape{C, 2 * h, 2 * w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j) full.at(c, i, j) = fused.at(c, i / 2, j / 2);
  return full;
}

std::pair<Tensor, PoolCache> max_pool_forward(const Tensor& x) {
  const auto [C, H, W] = feature_dims(x, "max_pool_forward");
  require_even(x.shape(), "max_pool_forward");
  const std::size_t h = H / 2, w = W / 2;
  Tensor y = Tensor::zeros(Shape{C, h, w});
  PoolCache cache{PoolKind::Max, x.shape(), std::vector<std::uint32_t>(C * h * w)};
  const auto in = x.data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        std::size_t best = (c * H + 2 * i) * W + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (c * H + 2 * i + di) * W + 2 * j + dj;
            if (in[idx] > in[best]) best = idx;  // strict: ties keep the earlier index
          }
        }
        const std::size_t out = (c * h + i) * w + j;
        y[out] = in[best];
        cache.argmax[out] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

std::pair<Tensor, PoolCache> avg_pool_forward(const Tensor& x) {
  const auto [C, H, W] = feature_dims(x, "avg_pool_forward");
  require_even(x.shape(), "avg_pool_forward");
  const std::size_t h = H / 2, w = W / 2;
  Tensor y = Tensor::zeros(Shape{C, h, w});
  const auto in = x.data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t top = (c * H + 2 * i) * W + 2 * j;
        y[(c * h + i) * w + j] = (in[top] + in[top + 1] + in[top + W] + in[top + W + 1]) / 4.0;
      }
    }
  }
  return {std::move(y), PoolCache{PoolKind::Avg, x.shape(), {}}};
}

Tensor pool_backward(const PoolCache& cache, const Tensor& dy) {
  const Shape& in = cache.input_shape;
  const Shape expected{in[0], in[1] / 2, in[2] / 2};
  if (dy.shape() != expected)
    throw std::invalid_argument("pool_backward: dy shape " + dy.shape().to_string() +
                                " does not match pooled shape " + expected.to_string());
  Tensor dx = Tensor::zeros(in);
  if (cache.kind == PoolKind::Max) {
    for (std::size_t o = 0; o < dy.size(); ++o) dx[cache.argmax[o]] += dy[o];
    return dx;
  }
  const std::size_t C = in[0], H = in[1], W = in[2], h = H / 2, w = W / 2;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double g = dy[(c * h + i) * w + j] / 4.0;
        const std::size_t top = (c * H + 2 * i) * W + 2 * j;
        dx[top] = g;
        dx[top + 1] = g;
        dx[top + W] = g;
        dx[top + W + 1] = g;
      }
    }
  }
  return dx;
}

Tensor random_pool_forward(const Tensor& x, ModeK k) {
  const auto [C, H, W] = feature_dims(x, "random_pool_forward");
  require_even(x.shape(), "random_pool_forward");
  const std::size_t h = H / 2, w = W / 2;
  Tensor y = Tensor::zeros(Shape{C, h, w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        y[(c * h + i) * w + j] =
            x[(c * H + 2 * i + k.row_offset()) * W + 2 * j + k.col_offset()];
  return y;
}

Tensor random_pool_backward(const Tensor& dy, ModeK k, const Shape& input_shape) {
  if (input_shape.rank() != 3) throw std::invalid_argument("random_pool_backward: input must be [C,H,W]");
  require_even(input_shape, "random_pool_backward");
  const std::size_t C = input_shape[0], H = input_shape[1], W = input_shape[2];
  const std::size_t h = H / 2, w = W / 2;
  if (dy.shape() != Shape{C, h, w})
    throw std::invalid_argument("random_pool_backward: dy shape " + dy.shape().to_string() +
                                " does not match pooled shape of " + input_shape.to_string());
  Tensor dx = Tensor::zeros(input_shape);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        dx[(c * H + 2 * i + k.row_offset()) * W + 2 * j + k.col_offset()] =
            dy[(c * h + i) * w + j];
  return dx;
}

std::pair<Tensor, ReluCache> relu_forward(const Tensor& x) {
  return {unary_map(x, [](double v) { return v > 0.0 ? v : 0.0; }), ReluCache{x}};
}

Tensor relu_backward(const ReluCache& cache, const Tensor& dy) {
  return binary_map(cache.input, dy, [](double x, double g) { return x > 0.0 ? g : 0.0; });
}

std::pair<Tensor, DenseCache> dense_forward(const Tensor& x, const Tensor& weights,
                                            const Tensor& bias) {
  if (weights.shape().rank() != 2)
    throw std::invalid_argument("dense weights must be [out,in], got " + weights.shape().to_string());
  const std::size_t out = weights.shape()[0], in = weights.shape()[1];
  if (x.size() != in)
    throw std::invalid_argument("dense_forward: input " + x.shape().to_string() + " has " +
                                std::to_string(x.size()) + " elements, weights expect " +
                                std::to_string(in));
  if (bias.shape() != Shape{out})
    throw std::invalid_argument("dense bias must be [" + std::to_string(out) + "]");
  Tensor y = Tensor::zeros(Shape{out});
  kernels::dense_forward(x.data().data(), weights.data().data(), bias.data().data(), in, out,
                         y.data().data());
  return {std::move(y), DenseCache{x, weights}};
}

DenseGrads dense_backward(const DenseCache& cache, const Tensor& dy) {
  const std::size_t out = cache.weights.shape()[0], in = cache.weights.shape()[1];
  if (dy.shape() != Shape{out})
    throw std::invalid_argument("dense_backward: dy shape " + dy.shape().to_string() +
                                " does not match [" + std::to_string(out) + "]");
  DenseGrads g{Tensor::zeros(cache.input.shape()), Tensor::zeros(cache.weights.shape()),
               Tensor::zeros(Shape{out})};
  kernels::dense_backward(cache.input.data().data(), cache.weights.data().data(),
                          dy.data().data(), in, out, g.dweights.data().data(),
                          g.dbias.data().data(), g.dx.data().data());
  return g;
}

SoftmaxLoss softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                  Reduction reduction) {
  if (logits.shape().rank() != 2)
    throw std::invalid_argument("softmax_cross_entropy: logits must be [B,classes]");
  const std::size_t B = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != B)
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for a batch of " + std::to_string(B));
  SoftmaxLoss result{0.0, Tensor::zeros(logits.shape()), Tensor::zeros(logits.shape())};
  const double scale = reduction == Reduction::Mean ? 1.0 / static_cast<double>(B) : 1.0;
  for (std::size_t b = 0; b < B; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                  " out of range [0," + std::to_string(classes) + ")");
    const double* row = logits.data().data() + b * classes;
    double* p = result.probs.data().data() + b * classes;
    const double peak = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(row[c] - peak);
      z += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= z;
    // log-sum-exp form keeps the loss finite when p[label] underflows
    result.loss += std::log(z) - (row[label] - peak);
    double* g = result.dlogits.data().data() + b * classes;
    for (std::size_t c = 0; c < classes; ++c)
      g[c] = (p[c] - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0)) * scale;
  }
  result.loss /= static_cast<double>(B);
  return result;
}

}  // namespace ecp
