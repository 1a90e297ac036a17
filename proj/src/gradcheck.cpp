#include "ecp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ecp/layers.hpp"
#include "ecp/rng.hpp"

namespace ecp {

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        double step) {
  Tensor probe = at;
  Tensor grad = Tensor::zeros(at.shape());
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = f(probe);
    probe[i] = original - step;
    const double down = f(probe);
    probe[i] = original;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double gradient_relative_error(const Tensor& analytic, const Tensor& numeric) {
  require_same_shape(analytic, numeric, "gradient_relative_error");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

bool GradcheckReport::passed() const {
  return std::all_of(layers.begin(), layers.end(), [](const auto& l) { return l.passed; });
}

const std::vector<std::string>& gradcheck_layer_names() {
  static const std::vector<std::string> names = {"conv",        "ecp_fused", "max_pool",
                                                 "avg_pool",    "random_pool", "relu",
                                                 "dense",       "softmax_ce"};
  return names;
}

namespace {

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// Values whose 2x2 blocks have a unique, well separated maximum, so central
// differences never cross a tie.
Tensor separated_blocks(const Shape& s, Rng& rng) {
  Tensor x = uniform_tensor(s, -1.0, 1.0, rng);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::round(x[i] * 1000.0) / 1000.0;
  const std::size_t C = s[0], H = s[1], W = s[2];
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; i += 2)
      for (std::size_t j = 0; j < W; j += 2) {
        const std::size_t w = static_cast<std::size_t>(rng.below(4));
        x.at(c, i + w / 2, j + w % 2) += 3.0;
      }
  return x;
}

// Away from the kink at zero.
Tensor away_from_zero(const Shape& s, Rng& rng) {
  Tensor x = uniform_tensor(s, -1.0, 1.0, rng);
  for (double& v : x.data())
    if (std::abs(v) < 1e-3) v = v < 0.0 ? -0.5 : 0.5;
  return x;
}

class Checker {
 public:
  Checker(const GradcheckOptions& opt, std::string layer)
      : opt_(opt), fault_(opt.inject_fault && *opt.inject_fault == layer) {
    result_.layer = std::move(layer);
  }

  void check(Tensor analytic, const std::function<double(const Tensor&)>& f, const Tensor& at) {
    if (fault_ && !faulted_ && analytic.size() > 0) {
      for (double& v : analytic.data()) v = v * 1.01 + 1e-3;
      faulted_ = true;
    }
    const Tensor numeric = numeric_gradient(f, at, opt_.step);
    result_.worst_error = std::max(result_.worst_error, gradient_relative_error(analytic, numeric));
  }

  void next_instance() {
    ++result_.instances;
    faulted_ = false;
  }

  LayerGradcheck finish() {
    result_.passed = result_.worst_error < opt_.tolerance && std::isfinite(result_.worst_error);
    return result_;
  }

 private:
  const GradcheckOptions& opt_;
  bool fault_;
  bool faulted_ = false;
  LayerGradcheck result_;
};

LayerGradcheck check_conv(const GradcheckOptions& opt, Rng& rng, bool fused) {
  Checker ck(opt, fused ? "ecp_fused" : "conv");
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const std::size_t cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
    const std::size_t kh = pick(rng, 1, 4), kw = pick(rng, 1, 4);
    std::size_t oh = pick(rng, 1, 6), ow = pick(rng, 1, 6);
    if (fused) {
      oh = 2 * pick(rng, 1, 3);
      ow = 2 * pick(rng, 1, 3);
    }
    const Shape xs{cin, oh + kh - 1, ow + kw - 1};
    const ModeK k(static_cast<int>(n % 4));
    Tensor x = uniform_tensor(xs, -1.0, 1.0, rng);
    ConvFilter f{uniform_tensor(Shape{cout, cin, kh, kw}, -1.0, 1.0, rng),
                 uniform_tensor(Shape{cout}, -1.0, 1.0, rng)};

    auto forward = [&](const Tensor& xx, const ConvFilter& ff) {
      return fused ? easy_conv_fused_forward(xx, ff, k) : conv2d_forward(xx, ff);
    };
    auto [y, cache] = forward(x, f);
    const Tensor dy = uniform_tensor(y.shape(), -1.0, 1.0, rng);
    const ConvGrads g = fused ? easy_conv_fused_backward(cache, dy) : conv2d_backward(cache, dy);

    ck.check(g.dx, [&](const Tensor& v) { return dot(forward(v, f).first, dy); }, x);
    ck.check(g.dweights, [&](const Tensor& v) {
      return dot(forward(x, ConvFilter{v, f.bias}).first, dy);
    }, f.weights);
    ck.check(g.dbias, [&](const Tensor& v) {
      return dot(forward(x, ConvFilter{f.weights, v}).first, dy);
    }, f.bias);
    ck.next_instance();
  }
  return ck.finish();
}

Shape pool_input_shape(Rng& rng) {
  return Shape{pick(rng, 1, 3), 2 * pick(rng, 1, 4), 2 * pick(rng, 1, 4)};
}

LayerGradcheck check_pool(const GradcheckOptions& opt, Rng& rng, PoolKind kind) {
  Checker ck(opt, kind == PoolKind::Max ? "max_pool" : "avg_pool");
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const Shape s = pool_input_shape(rng);
    const Tensor x = kind == PoolKind::Max ? separated_blocks(s, rng) : uniform_tensor(s, -1, 1, rng);
    auto forward = [&](const Tensor& v) {
      return kind == PoolKind::Max ? max_pool_forward(v) : avg_pool_forward(v);
    };
    auto [y, cache] = forward(x);
    const Tensor dy = uniform_tensor(y.shape(), -1.0, 1.0, rng);
    ck.check(pool_backward(cache, dy), [&](const Tensor& v) { return dot(forward(v).first, dy); }, x);
    ck.next_instance();
  }
  return ck.finish();
}

LayerGradcheck check_random_pool(const GradcheckOptions& opt, Rng& rng) {
  Checker ck(opt, "random_pool");
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const Shape s = pool_input_shape(rng);
    const ModeK k(static_cast<int>(n % 4));
    const Tensor x = uniform_tensor(s, -1.0, 1.0, rng);
    const Tensor y = random_pool_forward(x, k);
    const Tensor dy = uniform_tensor(y.shape(), -1.0, 1.0, rng);
    ck.check(random_pool_backward(dy, k, s),
             [&](const Tensor& v) { return dot(random_pool_forward(v, k), dy); }, x);
    ck.next_instance();
  }
  return ck.finish();
}

LayerGradcheck check_relu(const GradcheckOptions& opt, Rng& rng) {
  Checker ck(opt, "relu");
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const Tensor x = away_from_zero(Shape{pick(rng, 1, 3), pick(rng, 1, 6), pick(rng, 1, 6)}, rng);
    auto [y, cache] = relu_forward(x);
    const Tensor dy = uniform_tensor(y.shape(), -1.0, 1.0, rng);
    ck.check(relu_backward(cache, dy),
             [&](const Tensor& v) { return dot(relu_forward(v).first, dy); }, x);
    ck.next_instance();
  }
  return ck.finish();
}

LayerGradcheck check_dense(const GradcheckOptions& opt, Rng& rng) {
  Checker ck(opt, "dense");
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const std::size_t in = pick(rng, 1, 12), out = pick(rng, 1, 8);
    const Tensor x = uniform_tensor(Shape{in}, -1.0, 1.0, rng);
    const Tensor w = uniform_tensor(Shape{out, in}, -1.0, 1.0, rng);
    const Tensor b = uniform_tensor(Shape{out}, -1.0, 1.0, rng);
    auto [y, cache] = dense_forward(x, w, b);
    const Tensor dy = uniform_tensor(y.shape(), -1.0, 1.0, rng);
    const DenseGrads g = dense_backward(cache, dy);
    ck.check(g.dx, [&](const Tensor& v) { return dot(dense_forward(v, w, b).first, dy); }, x);
    ck.check(g.dweights, [&](const Tensor& v) { return dot(dense_forward(x, v, b).first, dy); }, w);
    ck.check(g.dbias, [&](const Tensor& v) { return dot(dense_forward(x, w, v).first, dy); }, b);
    ck.next_instance();
  }
  return ck.finish();
}

LayerGradcheck check_softmax(const GradcheckOptions& opt, Rng& rng) {
  Checker ck(opt, "softmax_ce");
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const std::size_t B = pick(rng, 1, 6);
    const Tensor logits = uniform_tensor(Shape{B, 10}, -3.0, 3.0, rng);
    std::vector<int> labels(B);
    for (int& l : labels) l = static_cast<int>(rng.below(10));
    const Reduction red = n % 2 ? Reduction::Sum : Reduction::Mean;
    const SoftmaxLoss s = softmax_cross_entropy(logits, labels, red);
    const double factor = red == Reduction::Sum ? static_cast<double>(B) : 1.0;
    ck.check(s.dlogits, [&](const Tensor& v) {
      return factor * softmax_cross_entropy(v, labels, red).loss;
    }, logits);
    ck.next_instance();
  }
  return ck.finish();
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (options.instances == 0) throw std::invalid_argument("gradcheck needs instances >= 1");
  if (options.inject_fault) {
    const auto& names = gradcheck_layer_names();
    if (std::find(names.begin(), names.end(), *options.inject_fault) == names.end())
      throw std::invalid_argument("unknown layer '" + *options.inject_fault + "' for fault injection");
  }
  using Check = std::function<LayerGradcheck(const GradcheckOptions&, Rng&)>;
  const std::vector<Check> checks = {
      [](const auto& o, Rng& r) { return check_conv(o, r, false); },
      [](const auto& o, Rng& r) { return check_conv(o, r, true); },
      [](const auto& o, Rng& r) { return check_pool(o, r, PoolKind::Max); },
      [](const auto& o, Rng& r) { return check_pool(o, r, PoolKind::Avg); },
      check_random_pool,
      check_relu,
      check_dense,
      check_softmax,
  };
  GradcheckReport report;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Rng rng = Rng::derive(options.seed, 100 + i);
    report.layers.push_back(checks[i](options, rng));
  }
  return report;
}

}  // namespace ecp
