#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "ecp/layers.hpp"
#include "ecp/mac_counter.hpp"
#include "ecp/mnist.hpp"
#include "ecp/network.hpp"

namespace ecp {

struct TrainConfig {
  std::size_t batch_size = 50;
  double learning_rate = 0.001;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  /// Sum applies the step to the gradient of the batch-summed loss.
  Reduction reduction = Reduction::Sum;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;     // mean per-sample cross-entropy over the pass
  double test_accuracy = 0.0;  // fraction in [0,1]; 0 when no test set was given
  double forward_ms = 0.0;
  double backward_ms = 0.0;
  double update_ms = 0.0;
  double eval_ms = 0.0;
  double conv_ms = 0.0;        // conv-stage forward time inside forward_ms
  std::size_t samples = 0;
  MacTally macs;               // counted over the training pass

  double train_ms() const { return forward_ms + backward_ms + update_ms; }
};

/// Shuffle stream for a run seed; distinct from the weight-init stream.
Rng training_rng(std::uint64_t seed);

/// One shuffled SGD pass. When `test` is given the epoch also evaluates.
EpochStats train_epoch(Network& net, const Dataset& train, const TrainConfig& cfg, Rng& rng,
                       const Dataset* test = nullptr, std::size_t epoch_index = 1);

/// Fraction of argmax predictions equal to the label. Never mutates `net`.
double evaluate(const Network& net, const Dataset& test, double* elapsed_ms = nullptr);

struct TrainingSummary {
  std::vector<EpochStats> epochs;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

/// First epoch (1-based) whose test accuracy reaches `threshold`.
std::optional<std::size_t> first_epoch_reaching(const std::vector<EpochStats>& epochs,
                                                double threshold);

/// cfg.epochs passes with evaluation after each; `on_epoch` sees every row.
TrainingSummary train(Network& net, const Dataset& train, const Dataset& test,
                      const TrainConfig& cfg,
                      const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace ecp
