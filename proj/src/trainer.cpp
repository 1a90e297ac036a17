#include "ecp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace ecp {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

constexpr std::uint64_t kShuffleStream = 2;

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning rate must be finite and >= 0");
}

Rng training_rng(std::uint64_t seed) { return Rng::derive(seed, kShuffleStream); }

EpochStats train_epoch(Network& net, const Dataset& train, const TrainConfig& cfg, Rng& rng,
                       const Dataset* test, std::size_t epoch_index) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("training set is empty");

  EpochStats stats;
  stats.epoch = epoch_index;
  MacCounter counter;
  StageTimes conv_time;
  ForwardTrace trace;
  double loss_sum = 0.0;

  BatchSampler sampler(train, cfg.batch_size, rng);
  while (auto batch = sampler.next()) {
    auto t = Clock::now();
    const Tensor logits = net.forward_train(batch->images, trace, &conv_time);
    const SoftmaxLoss loss = softmax_cross_entropy(logits, batch->labels, cfg.reduction);
    stats.forward_ms += ms_since(t);

    t = Clock::now();
    const std::vector<Tensor> grads = net.backward(trace, loss.dlogits);
    stats.backward_ms += ms_since(t);

    t = Clock::now();
    net.apply_sgd(grads, cfg.learning_rate);
    stats.update_ms += ms_since(t);

    loss_sum += loss.loss * static_cast<double>(batch->labels.size());
    stats.samples += batch->labels.size();
  }
  stats.train_loss = loss_sum / static_cast<double>(stats.samples);
  stats.conv_ms = conv_time.conv_ms;
  stats.macs = counter.tally();

  if (test != nullptr) stats.test_accuracy = evaluate(net, *test, &stats.eval_ms);
  return stats;
}

double evaluate(const Network& net, const Dataset& test, double* elapsed_ms) {
  const auto start = Clock::now();
  if (test.size() == 0) {
    if (elapsed_ms) *elapsed_ms = 0.0;
    return 0.0;
  }
  std::vector<double> logits(net.config().classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    net.logits(test.sample(i), logits);
    if (argmax_class(logits) == static_cast<std::size_t>(test.labels()[i])) ++correct;
  }
  if (elapsed_ms) *elapsed_ms = ms_since(start);
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::optional<std::size_t> first_epoch_reaching(const std::vector<EpochStats>& epochs,
                                                double threshold) {
  for (const EpochStats& e : epochs)
    if (e.test_accuracy >= threshold) return e.epoch;
  return std::nullopt;
}

TrainingSummary train(Network& net, const Dataset& train_set, const Dataset& test,
                      const TrainConfig& cfg,
                      const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  TrainingSummary summary;
  Rng rng = training_rng(cfg.seed);
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    EpochStats stats = train_epoch(net, train_set, cfg, rng, &test, e);
    if (stats.test_accuracy > summary.best_accuracy || summary.best_epoch == 0) {
      summary.best_accuracy = stats.test_accuracy;
      summary.best_epoch = e;
    }
    if (on_epoch) on_epoch(stats);
    summary.epochs.push_back(std::move(stats));
  }
  return summary;
}

}  // namespace ecp
