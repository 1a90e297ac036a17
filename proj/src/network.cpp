#include "ecp/network.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <map>
#include <stdexcept>
#include <string>

#include "ecp/rng.hpp"
#include "kernels.hpp"

namespace ecp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::uint64_t kWeightStream = 0;
constexpr std::uint64_t kModeStream = 1;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::size_t parse_size(std::string_view key, std::string_view text) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end)
    throw std::invalid_argument("config: bad integer for '" + std::string(key) + "': '" +
                                std::string(text) + "'");
  return value;
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view text) {
  std::vector<std::size_t> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse_size(key, text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, ModeK>)
      out += std::to_string(items[i].value());
    else
      out += std::to_string(items[i]);
  }
  return out;
}

kernels::ConvDims conv_dims(const ConvStage& s, const Tensor& weights) {
  return {s.input[0],         s.input[1],         s.input[2],
          weights.shape()[0], weights.shape()[2], weights.shape()[3]};
}

kernels::Grid conv_grid(const ConvStage& s, const kernels::ConvDims& d) {
  const std::size_t out_h = d.height - d.kernel_h + 1;
  const std::size_t out_w = d.width - d.kernel_w + 1;
  if (s.fused) return {s.fused->row_offset(), s.fused->col_offset(), 2, out_h / 2, out_w / 2};
  return {0, 0, 1, out_h, out_w};
}

}  // namespace

std::string_view to_string(Arch arch) {
  return arch == Arch::OneConv ? "one_conv" : "two_conv";
}

std::string_view to_string(Pooling pooling) {
  switch (pooling) {
    case Pooling::Max: return "max";
    case Pooling::Avg: return "avg";
    case Pooling::Random: return "random";
    case Pooling::Ecp: return "ecp";
  }
  return "?";
}

Arch parse_arch(std::string_view text) {
  if (text == "one_conv" || text == "conv1") return Arch::OneConv;
  if (text == "two_conv" || text == "conv2") return Arch::TwoConv;
  throw std::invalid_argument("unknown architecture '" + std::string(text) + "'");
}

Pooling parse_pooling(std::string_view text) {
  if (text == "max") return Pooling::Max;
  if (text == "avg") return Pooling::Avg;
  if (text == "random") return Pooling::Random;
  if (text == "ecp") return Pooling::Ecp;
  throw std::invalid_argument("unknown pooling '" + std::string(text) + "'");
}

void NetworkConfig::validate() const {
  if (uses_mode() && !mode)
    throw std::invalid_argument("pooling '" + std::string(to_string(pooling)) +
                                "' requires a mode k (fixed or seeded-random)");
  if (!uses_mode() && mode)
    throw std::invalid_argument("mode k only applies to random or ecp pooling");
  if (!layer_modes.empty()) {
    if (!uses_mode()) throw std::invalid_argument("per-layer modes need random or ecp pooling");
    if (layer_modes.size() != conv_layers())
      throw std::invalid_argument("expected " + std::to_string(conv_layers()) +
                                  " per-layer modes, got " + std::to_string(layer_modes.size()));
  }
  if (conv_channels.size() < conv_layers())
    throw std::invalid_argument("need " + std::to_string(conv_layers()) + " conv channel counts");
  for (std::size_t l = 0; l < conv_layers(); ++l)
    if (conv_channels[l] == 0) throw std::invalid_argument("conv channel count must be >= 1");
  if (kernel == 0 || hidden == 0 || classes < 2 || input_channels == 0 || input_size == 0)
    throw std::invalid_argument("kernel, hidden, input extents must be >= 1 and classes >= 2");

  std::size_t size = input_size;
  for (std::size_t l = 0; l < conv_layers(); ++l) {
    if (size < kernel)
      throw std::invalid_argument("conv layer " + std::to_string(l + 1) + ": input " +
                                  std::to_string(size) + " smaller than kernel " +
                                  std::to_string(kernel));
    const std::size_t conv_out = size - kernel + 1;
    if (conv_out % 2 != 0)
      throw std::invalid_argument("conv layer " + std::to_string(l + 1) + " output " +
                                  std::to_string(conv_out) + "x" + std::to_string(conv_out) +
                                  " cannot be pooled 2x2 without truncation");
    size = conv_out / 2;
  }
}

std::string NetworkConfig::to_text() const {
  std::string out;
  out += "arch=" + std::string(to_string(arch)) + "\n";
  out += "pooling=" + std::string(to_string(pooling)) + "\n";
  if (mode)
    out += "mode=" + (mode->is_random() ? std::string("random")
                                        : std::to_string(mode->fixed->value())) + "\n";
  if (!layer_modes.empty()) out += "layer_modes=" + join(layer_modes) + "\n";
  out += "conv_channels=" + join(conv_channels) + "\n";
  out += "kernel=" + std::to_string(kernel) + "\n";
  out += "hidden=" + std::to_string(hidden) + "\n";
  out += "classes=" + std::to_string(classes) + "\n";
  out += "input_channels=" + std::to_string(input_channels) + "\n";
  out += "input_size=" + std::to_string(input_size) + "\n";
  return out;
}

NetworkConfig NetworkConfig::from_text(std::string_view text) {
  NetworkConfig cfg;
  std::map<std::string, std::string, std::less<>> seen;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text.remove_prefix(eol == std::string_view::npos ? text.size() : eol + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw std::invalid_argument("config: line without '=': '" + std::string(line) + "'");
    seen.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  for (const auto& [key, value] : seen) {
    if (key == "arch") cfg.arch = parse_arch(value);
    else if (key == "pooling") cfg.pooling = parse_pooling(value);
    else if (key == "mode")
      cfg.mode = value == "random" ? ModeChoice::seeded_random()
                                   : ModeChoice::of(ModeK(static_cast<int>(parse_size(key, value))));
    else if (key == "layer_modes")
      for (std::size_t k : parse_list(key, value)) cfg.layer_modes.emplace_back(static_cast<int>(k));
    else if (key == "conv_channels") cfg.conv_channels = parse_list(key, value);
    else if (key == "kernel") cfg.kernel = parse_size(key, value);
    else if (key == "hidden") cfg.hidden = parse_size(key, value);
    else if (key == "classes") cfg.classes = parse_size(key, value);
    else if (key == "input_channels") cfg.input_channels = parse_size(key, value);
    else if (key == "input_size") cfg.input_size = parse_size(key, value);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

Network build_network_skeleton(const NetworkConfig& cfg, std::vector<ModeK> modes) {
  cfg.validate();
  if (cfg.uses_mode() && modes.size() != cfg.conv_layers())
    throw std::invalid_argument("need one realized mode per conv layer");
  if (!cfg.uses_mode() && !modes.empty())
    throw std::invalid_argument("modes given for a network without random pooling");

  Network net;
  net.config_ = cfg;
  net.modes_ = std::move(modes);

  Shape cur{cfg.input_channels, cfg.input_size, cfg.input_size};
  for (std::size_t l = 0; l < cfg.conv_layers(); ++l) {
    const std::size_t out_ch = cfg.conv_channels[l];
    const std::size_t conv_out = cur[1] - cfg.kernel + 1;
    const std::string prefix = "conv" + std::to_string(l + 1);
    const std::size_t w = net.params_.size();
    net.params_.push_back({prefix + ".weight",
                           Tensor::zeros(Shape{out_ch, cur[0], cfg.kernel, cfg.kernel})});
    net.params_.push_back({prefix + ".bias", Tensor::zeros(Shape{out_ch})});

    const Shape pooled{out_ch, conv_out / 2, conv_out / 2};
    if (cfg.pooling == Pooling::Ecp) {
      net.stages_.emplace_back(ConvStage{w, cur, net.modes_[l]});
    } else {
      net.stages_.emplace_back(ConvStage{w, cur, std::nullopt});
      const Shape conv_shape{out_ch, conv_out, conv_out};
      std::optional<ModeK> random;
      if (cfg.pooling == Pooling::Random) random = net.modes_[l];
      const PoolKind kind = cfg.pooling == Pooling::Avg ? PoolKind::Avg : PoolKind::Max;
      net.stages_.emplace_back(PoolStage{kind, random, conv_shape});
    }
    net.stages_.emplace_back(ReluStage{});
    cur = pooled;
  }
  net.stages_.emplace_back(FlattenStage{cur});
  const std::size_t flat = cur.element_count();
  net.params_.push_back({"fc1.weight", Tensor::zeros(Shape{cfg.hidden, flat})});
  net.params_.push_back({"fc1.bias", Tensor::zeros(Shape{cfg.hidden})});
  net.stages_.emplace_back(DenseStage{net.params_.size() - 2});
  net.stages_.emplace_back(ReluStage{});
  net.params_.push_back({"fc2.weight", Tensor::zeros(Shape{cfg.classes, cfg.hidden})});
  net.params_.push_back({"fc2.bias", Tensor::zeros(Shape{cfg.classes})});
  net.stages_.emplace_back(DenseStage{net.params_.size() - 2});
  return net;
}

Network build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<ModeK> modes;
  if (cfg.uses_mode()) {
    if (!cfg.layer_modes.empty()) {
      modes = cfg.layer_modes;
    } else {
      ModeK shared = cfg.mode->fixed.value_or(ModeK(0));
      if (cfg.mode->is_random()) {
        Rng mode_rng = Rng::derive(seed, kModeStream);
        shared = ModeK(static_cast<int>(mode_rng.below(4)));
      }
      modes.assign(cfg.conv_layers(), shared);
    }
  }
  Network net = build_network_skeleton(cfg, std::move(modes));

  Rng rng = Rng::derive(seed, kWeightStream);
  for (Parameter& p : net.params_) {
    const Shape& s = p.value.shape();
    if (s.rank() == 1) continue;  // biases stay zero
    std::size_t fan_in, fan_out;
    if (s.rank() == 4) {
      const std::size_t receptive = s[2] * s[3];
      fan_in = s[1] * receptive;
      fan_out = s[0] * receptive;
    } else {
      fan_in = s[1];
      fan_out = s[0];
    }
    p.value = glorot_uniform(s, fan_in, fan_out, rng);
  }
  return net;
}

const Tensor& Network::parameter(std::string_view name) const {
  for (const Parameter& p : params_)
    if (p.name == name) return p.value;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

Tensor& Network::parameter(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).parameter(name));
}

Shape Network::input_shape() const {
  return Shape{config_.input_channels, config_.input_size, config_.input_size};
}

std::vector<Shape> Network::shape_chain() const {
  std::vector<Shape> chain{input_shape()};
  for (const Stage& stage : stages_) {
    std::visit(overloaded{
                   [&](const ConvStage& s) {
                     const auto d = conv_dims(s, params_[s.weight].value);
                     const auto g = conv_grid(s, d);
                     chain.push_back(Shape{d.out_channels, g.rows, g.cols});
                   },
                   [&](const PoolStage& s) {
                     chain.push_back(Shape{s.input[0], s.input[1] / 2, s.input[2] / 2});
                   },
                   [](const ReluStage&) {},
                   [&](const FlattenStage& s) { chain.push_back(Shape{s.input.element_count()}); },
                   [&](const DenseStage& s) {
                     chain.push_back(Shape{params_[s.weight].value.shape()[0]});
                   },
               },
               stage);
  }
  return chain;
}

void Network::run_sample(const double* x, std::vector<StageTrace>* trace, double* logits,
                         StageTimes* times) const {
  const std::size_t in_count = input_shape().element_count();
  std::vector<double> cur(x, x + in_count);
  std::vector<double> next;
  std::vector<double> cols;

  for (std::size_t i = 0; i < stages_.size(); ++i) {
    StageTrace* slot = trace ? &(*trace)[i] : nullptr;
    std::visit(
        overloaded{
            [&](const ConvStage& s) {
              const Tensor& w = params_[s.weight].value;
              const Tensor& b = params_[s.weight + 1].value;
              const auto d = conv_dims(s, w);
              const auto g = conv_grid(s, d);
              const auto start = Clock::now();
              cols.resize(d.patch() * g.positions());
              next.resize(d.out_channels * g.positions());
              kernels::im2col(cur.data(), d, g, cols.data());
              kernels::conv_forward(cols.data(), w.data().data(), b.data().data(), d,
                                    g.positions(), next.data());
              if (times) times->conv_ms += elapsed_ms(start);
              if (slot) slot->saved = cols;
              cur.swap(next);
            },
            [&](const PoolStage& s) {
              const std::size_t C = s.input[0], H = s.input[1], W = s.input[2];
              const std::size_t h = H / 2, w = W / 2;
              next.assign(C * h * w, 0.0);
              if (slot && !s.random && s.kind == PoolKind::Max) slot->argmax.resize(C * h * w);
              for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t r = 0; r < h; ++r) {
                  for (std::size_t q = 0; q < w; ++q) {
                    const std::size_t top = (c * H + 2 * r) * W + 2 * q;
                    const std::size_t o = (c * h + r) * w + q;
                    if (s.random) {
                      next[o] = cur[top + s.random->row_offset() * W + s.random->col_offset()];
                    } else if (s.kind == PoolKind::Avg) {
                      next[o] = (cur[top] + cur[top + 1] + cur[top + W] + cur[top + W + 1]) / 4.0;
                    } else {
                      std::size_t best = top;
                      for (std::size_t idx : {top + 1, top + W, top + W + 1})
                        if (cur[idx] > cur[best]) best = idx;
                      next[o] = cur[best];
                      if (slot) slot->argmax[o] = static_cast<std::uint32_t>(best);
                    }
                  }
                }
              }
              cur.swap(next);
            },
            [&](const ReluStage&) {
              if (slot) slot->saved = cur;
              for (double& v : cur) v = v > 0.0 ? v : 0.0;
            },
            [](const FlattenStage&) {},
            [&](const DenseStage& s) {
              const Tensor& w = params_[s.weight].value;
              const Tensor& b = params_[s.weight + 1].value;
              const std::size_t out = w.shape()[0], in = w.shape()[1];
              next.resize(out);
              kernels::dense_forward(cur.data(), w.data().data(), b.data().data(), in, out,
                                     next.data());
              if (slot) slot->saved = cur;
              cur.swap(next);
            },
        },
        stages_[i]);
  }
  std::copy(cur.begin(), cur.end(), logits);
}

namespace {

void check_batch(const Tensor& batch, const Shape& input) {
  const Shape& s = batch.shape();
  if (s.rank() != 4 || s[1] != input[0] || s[2] != input[1] || s[3] != input[2])
    throw std::invalid_argument("network input must be [B," + std::to_string(input[0]) + "," +
                                std::to_string(input[1]) + "," + std::to_string(input[2]) +
                                "], got " + s.to_string());
}

}  // namespace

Tensor Network::forward(const Tensor& batch, StageTimes* times) const {
  check_batch(batch, input_shape());
  const std::size_t B = batch.shape()[0];
  const std::size_t per = input_shape().element_count();
  Tensor out = Tensor::zeros(Shape{B, config_.classes});
  for (std::size_t b = 0; b < B; ++b)
    run_sample(batch.data().data() + b * per, nullptr, out.data().data() + b * config_.classes,
               times);
  return out;
}

Tensor Network::forward_train(const Tensor& batch, ForwardTrace& trace, StageTimes* times) const {
  check_batch(batch, input_shape());
  const std::size_t B = batch.shape()[0];
  const std::size_t per = input_shape().element_count();
  trace.batch = B;
  trace.samples.assign(B, std::vector<StageTrace>(stages_.size()));
  Tensor out = Tensor::zeros(Shape{B, config_.classes});
  for (std::size_t b = 0; b < B; ++b)
    run_sample(batch.data().data() + b * per, &trace.samples[b],
               out.data().data() + b * config_.classes, times);
  return out;
}

void Network::logits(std::span<const double> sample, std::span<double> out) const {
  if (sample.size() != input_shape().element_count() || out.size() != config_.classes)
    throw std::invalid_argument("Network::logits: wrong sample or output size");
  run_sample(sample.data(), nullptr, out.data(), nullptr);
}

std::vector<Tensor> Network::backward(const ForwardTrace& trace, const Tensor& dlogits) const {
  if (dlogits.shape() != Shape{trace.batch, config_.classes})
    throw std::invalid_argument("backward: dlogits shape " + dlogits.shape().to_string() +
                                " does not match the traced batch");
  std::vector<Tensor> grads;
  grads.reserve(params_.size());
  for (const Parameter& p : params_) grads.push_back(Tensor::zeros(p.value.shape()));

  std::vector<double> g, dx, dcols;
  for (std::size_t b = 0; b < trace.batch; ++b) {
    const auto& slots = trace.samples[b];
    g.assign(dlogits.data().begin() + static_cast<std::ptrdiff_t>(b * config_.classes),
             dlogits.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * config_.classes));
    for (std::size_t i = stages_.size(); i-- > 0;) {
      const StageTrace& slot = slots[i];
      std::visit(
          overloaded{
              [&](const ConvStage& s) {
                const Tensor& w = params_[s.weight].value;
                const auto d = conv_dims(s, w);
                const auto grid = conv_grid(s, d);
                const bool need_dx = i > 0;
                if (need_dx) dcols.resize(d.patch() * grid.positions());
                kernels::conv_backward(slot.saved.data(), w.data().data(), g.data(), d,
                                       grid.positions(), grads[s.weight].data().data(),
                                       grads[s.weight + 1].data().data(),
                                       need_dx ? dcols.data() : nullptr);
                if (need_dx) {
                  dx.assign(s.input.element_count(), 0.0);
                  kernels::col2im_add(dcols.data(), d, grid, dx.data());
                  g.swap(dx);
                }
              },
              [&](const PoolStage& s) {
                const std::size_t C = s.input[0], H = s.input[1], W = s.input[2];
                const std::size_t h = H / 2, w = W / 2;
                dx.assign(C * H * W, 0.0);
                for (std::size_t c = 0; c < C; ++c) {
                  for (std::size_t r = 0; r < h; ++r) {
                    for (std::size_t q = 0; q < w; ++q) {
                      const std::size_t top = (c * H + 2 * r) * W + 2 * q;
                      const std::size_t o = (c * h + r) * w + q;
                      if (s.random) {
                        dx[top + s.random->row_offset() * W + s.random->col_offset()] = g[o];
                      } else if (s.kind == PoolKind::Avg) {
                        const double share = g[o] / 4.0;
                        dx[top] = share;
                        dx[top + 1] = share;
                        dx[top + W] = share;
                        dx[top + W + 1] = share;
                      } else {
                        dx[slot.argmax[o]] = g[o];
                      }
                    }
                  }
                }
                g.swap(dx);
              },
              [&](const ReluStage&) {
                for (std::size_t k = 0; k < g.size(); ++k)
                  if (!(slot.saved[k] > 0.0)) g[k] = 0.0;
              },
              [](const FlattenStage&) {},
              [&](const DenseStage& s) {
                const Tensor& w = params_[s.weight].value;
                const std::size_t out = w.shape()[0], in = w.shape()[1];
                dx.resize(in);
                kernels::dense_backward(slot.saved.data(), w.data().data(), g.data(), in, out,
                                        grads[s.weight].data().data(),
                                        grads[s.weight + 1].data().data(), dx.data());
                g.swap(dx);
              },
          },
          stages_[i]);
    }
  }
  return grads;
}

void Network::apply_sgd(const std::vector<Tensor>& grads, double learning_rate) {
  if (grads.size() != params_.size())
    throw std::invalid_argument("apply_sgd: expected one gradient per parameter");
  for (std::size_t i = 0; i < params_.size(); ++i)
    axpy_inplace(params_[i].value, -learning_rate, grads[i]);
}

std::size_t argmax_class(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax_class: empty logits");
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) -
                                  logits.begin());
}

}  // namespace ecp
