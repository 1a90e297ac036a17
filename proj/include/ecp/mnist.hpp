#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecp/rng.hpp"
#include "ecp/tensor.hpp"

namespace ecp {

/// Images [N, 1, rows, cols] in [0, 1] paired with labels in [0, 10).
class Dataset {
 public:
  Dataset() = default;
  /// Validates the pairing, pixel range, and label range.
  Dataset(Tensor images, std::vector<int> labels);

  std::size_t size() const noexcept { return labels_.size(); }
  const Tensor& images() const noexcept { return images_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  Shape sample_shape() const;
  std::span<const double> sample(std::size_t i) const;

  /// First `count` samples (or all, if fewer).
  Dataset head(std::size_t count) const;

 private:
  Tensor images_;
  std::vector<int> labels_;
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

/// IDX image file -> [N, 1, 28, 28], every byte divided by 255.0.
Tensor load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

/// Standard file names under `dir`: train-images-idx3-ubyte etc. Also accepts
/// the dotted spelling (train-images.idx3-ubyte).
Dataset load_mnist_train(const std::filesystem::path& dir);
Dataset load_mnist_test(const std::filesystem::path& dir);

/// ECP_DATA_DIR if set and non-empty.
std::optional<std::filesystem::path> data_dir_from_env();

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// One shuffled pass over a dataset in mini-batches. The last batch may be
/// short. The permutation is drawn from `rng` at construction.
class BatchSampler {
 public:
  BatchSampler(const Dataset& data, std::size_t batch_size, Rng& rng);

  std::size_t batch_count() const noexcept;
  std::optional<Batch> next();
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const Dataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Copies the given samples into a batch.
Batch gather(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace ecp
