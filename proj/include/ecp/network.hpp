#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ecp/layers.hpp"
#include "ecp/tensor.hpp"

namespace ecp {

enum class Arch { OneConv, TwoConv };
enum class Pooling { Max, Avg, Random, Ecp };

std::string_view to_string(Arch arch);
std::string_view to_string(Pooling pooling);
Arch parse_arch(std::string_view text);        // "one_conv"/"conv1", "two_conv"/"conv2"
Pooling parse_pooling(std::string_view text);  // "max", "avg", "random", "ecp"

/// Fixed mode k, or one drawn from the build seed.
struct ModeChoice {
  std::optional<ModeK> fixed;

  static ModeChoice of(ModeK k) { return {k}; }
  static ModeChoice seeded_random() { return {}; }
  bool is_random() const noexcept { return !fixed.has_value(); }
};

/// Declarative layer stack: per conv stage Conv -> Pool -> ReLU, then
/// Flatten -> Dense -> ReLU -> Dense. With Pooling::Ecp each Conv+Pool pair
/// is one fused easy convolution.
struct NetworkConfig {
  Arch arch = Arch::TwoConv;
  Pooling pooling = Pooling::Max;
  /// Required iff pooling is Random or Ecp.
  std::optional<ModeChoice> mode;
  /// Optional per-conv-layer override of the shared mode.
  std::vector<ModeK> layer_modes;

  std::vector<std::size_t> conv_channels = {20, 32};
  std::size_t kernel = 5;
  std::size_t hidden = 100;
  std::size_t classes = 10;
  std::size_t input_channels = 1;
  std::size_t input_size = 28;

  std::size_t conv_layers() const { return arch == Arch::OneConv ? 1 : 2; }
  bool uses_mode() const { return pooling == Pooling::Random || pooling == Pooling::Ecp; }

  /// Throws std::invalid_argument on an inconsistent config or a shape chain
  /// that would hit an odd pooled extent.
  void validate() const;

  /// key=value lines; the checkpoint config block.
  std::string to_text() const;
  static NetworkConfig from_text(std::string_view text);
};

struct Parameter {
  std::string name;
  Tensor value;
};

struct ConvStage {
  std::size_t weight;  // parameter index; bias is weight + 1
  Shape input;
  std::optional<ModeK> fused;  // set for easy convolution
};
struct PoolStage {
  PoolKind kind;
  std::optional<ModeK> random;  // set for random pooling; kind is ignored then
  Shape input;
};
struct ReluStage {};
struct FlattenStage {
  Shape input;
};
struct DenseStage {
  std::size_t weight;
};
using Stage = std::variant<ConvStage, PoolStage, ReluStage, FlattenStage, DenseStage>;

/// Saved activations for one sample, one slot per stage.
struct StageTrace {
  std::vector<double> saved;          // conv: im2col columns; relu/dense: input
  std::vector<std::uint32_t> argmax;  // max pooling
};
struct ForwardTrace {
  std::size_t batch = 0;
  std::vector<std::vector<StageTrace>> samples;
};

/// Per-call accumulators for wall-clock spent inside convolution stages.
struct StageTimes {
  double conv_ms = 0.0;
};

class Network {
 public:
  const NetworkConfig& config() const noexcept { return config_; }
  /// Realized mode per conv layer (empty for max/avg pooling).
  const std::vector<ModeK>& modes() const noexcept { return modes_; }
  const std::vector<Stage>& stages() const noexcept { return stages_; }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  const Tensor& parameter(std::string_view name) const;
  Tensor& parameter(std::string_view name);

  /// Input shape, then the output shape of every non-ReLU stage.
  std::vector<Shape> shape_chain() const;
  Shape input_shape() const;

  /// batch [B, C, H, W] -> logits [B, classes]. No state is kept.
  Tensor forward(const Tensor& batch, StageTimes* times = nullptr) const;

  /// As forward, and records what backward needs.
  Tensor forward_train(const Tensor& batch, ForwardTrace& trace,
                       StageTimes* times = nullptr) const;

  /// Parameter gradients (aligned with parameters()) of sum(dlogits * logits),
  /// accumulated over samples in batch order.
  std::vector<Tensor> backward(const ForwardTrace& trace, const Tensor& dlogits) const;

  /// Plain SGD: w <- w - lr * g.
  void apply_sgd(const std::vector<Tensor>& grads, double learning_rate);

  /// Logits of one sample; `sample` holds C*H*W values.
  void logits(std::span<const double> sample, std::span<double> out) const;

 private:
  friend Network build_network(const NetworkConfig& cfg, std::uint64_t seed);
  friend Network build_network_skeleton(const NetworkConfig& cfg, std::vector<ModeK> modes);

  void run_sample(const double* x, std::vector<StageTrace>* trace, double* logits,
                  StageTimes* times) const;

  NetworkConfig config_;
  std::vector<ModeK> modes_;
  std::vector<Stage> stages_;
  std::vector<Parameter> params_;
};

/// Validates the config, resolves seeded-random modes, and initializes weights
/// Glorot-uniform with zero biases. Same (cfg, seed) gives identical weights.
Network build_network(const NetworkConfig& cfg, std::uint64_t seed);

/// Layer stack with the given realized modes and zero parameters.
Network build_network_skeleton(const NetworkConfig& cfg, std::vector<ModeK> modes);

/// Index of the largest logit; ties go to the lowest class.
std::size_t argmax_class(std::span<const double> logits);

}  // namespace ecp
