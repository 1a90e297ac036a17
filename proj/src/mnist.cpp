#include "ecp/mnist.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace ecp {

namespace {

constexpr std::size_t kSide = 28;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t at,
                        const std::filesystem::path& path) {
  if (bytes.size() < at + 4)
    throw std::runtime_error("'" + path.string() + "': truncated IDX header");
  return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
         (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

std::filesystem::path find_file(const std::filesystem::path& dir, const std::string& stem,
                                const std::string& kind) {
  for (const std::string& name : {stem + "-" + kind, stem + "." + kind}) {
    const auto candidate = dir / name;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw std::runtime_error("MNIST file '" + (dir / (stem + "-" + kind)).string() +
                           "' not found");
}

}  // namespace

Dataset::Dataset(Tensor images, std::vector<int> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
  if (images_.shape().rank() != 4)
    throw std::invalid_argument("dataset images must be [N,C,H,W], got " +
                                images_.shape().to_string());
  if (images_.shape()[0] != labels_.size())
    throw std::invalid_argument("dataset has " + std::to_string(images_.shape()[0]) +
                                " images but " + std::to_string(labels_.size()) + " labels");
  for (double v : images_.data())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("dataset pixel outside [0,1]");
  for (int l : labels_)
    if (l < 0 || l >= 10)
      throw std::invalid_argument("dataset label " + std::to_string(l) + " outside [0,10)");
}

Shape Dataset::sample_shape() const {
  const auto& d = images_.shape().dims();
  return Shape{d[1], d[2], d[3]};
}

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t per = sample_shape().element_count();
  return images_.data().subspan(i * per, per);
}

Dataset Dataset::head(std::size_t count) const {
  count = std::min(count, size());
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Batch b = gather(*this, idx);
  return Dataset(std::move(b.images), std::move(b.labels));
}

Tensor load_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kIdxImageMagic)
    throw std::runtime_error("'" + path.string() + "': IDX image magic must be 2051, got " +
                             std::to_string(magic));
  const std::size_t n = read_be32(bytes, 4, path);
  const std::size_t rows = read_be32(bytes, 8, path);
  const std::size_t cols = read_be32(bytes, 12, path);
  if (rows != kSide || cols != kSide)
    throw std::runtime_error("'" + path.string() + "': expected 28x28 images, got " +
                             std::to_string(rows) + "x" + std::to_string(cols));
  if (n == 0) throw std::runtime_error("'" + path.string() + "': contains no images");
  const std::size_t payload = n * rows * cols;
  if (bytes.size() != 16 + payload)
    throw std::runtime_error("'" + path.string() + "': expected " + std::to_string(payload) +
                             " pixel bytes, found " + std::to_string(bytes.size() - 16));
  std::vector<double> pixels(payload);
  for (std::size_t i = 0; i < payload; ++i) pixels[i] = static_cast<double>(bytes[16 + i]) / 255.0;
  return Tensor::from(Shape{n, 1, rows, cols}, std::move(pixels));
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kIdxLabelMagic)
    throw std::runtime_error("'" + path.string() + "': IDX label magic must be 2049, got " +
                             std::to_string(magic));
  const std::size_t n = read_be32(bytes, 4, path);
  if (bytes.size() != 8 + n)
    throw std::runtime_error("'" + path.string() + "': expected " + std::to_string(n) +
                             " labels, found " + std::to_string(bytes.size() - 8));
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = bytes[8 + i];
    if (label >= 10)
      throw std::runtime_error("'" + path.string() + "': label " + std::to_string(label) +
                               " at index " + std::to_string(i) + " outside [0,10)");
    labels[i] = label;
  }
  return labels;
}

Dataset load_mnist_train(const std::filesystem::path& dir) {
  return Dataset(load_idx_images(find_file(dir, "train-images", "idx3-ubyte")),
                 load_idx_labels(find_file(dir, "train-labels", "idx1-ubyte")));
}

Dataset load_mnist_test(const std::filesystem::path& dir) {
  return Dataset(load_idx_images(find_file(dir, "t10k-images", "idx3-ubyte")),
                 load_idx_labels(find_file(dir, "t10k-labels", "idx1-ubyte")));
}

std::optional<std::filesystem::path> data_dir_from_env() {
  const char* env = std::getenv("ECP_DATA_DIR");
  if (env == nullptr || *env == '\0') return std::nullopt;
  return std::filesystem::path(env);
}

BatchSampler::BatchSampler(const Dataset& data, std::size_t batch_size, Rng& rng)
    : data_(&data), batch_size_(batch_size), order_(data.size()) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  shuffle(order_, rng);
}

std::size_t BatchSampler::batch_count() const noexcept {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<Batch> BatchSampler::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
  Batch b = gather(*data_, std::span(order_).subspan(cursor_, count));
  cursor_ += count;
  return b;
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("gather: no indices");
  const Shape s = data.sample_shape();
  const std::size_t per = s.element_count();
  std::vector<double> pixels(indices.size() * per);
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= data.size()) throw std::out_of_range("gather: sample index out of range");
    const auto src = data.sample(indices[i]);
    std::copy(src.begin(), src.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * per));
    labels[i] = data.labels()[indices[i]];
  }
  return Batch{Tensor::from(Shape{indices.size(), s[0], s[1], s[2]}, std::move(pixels)),
               std::move(labels), std::vector<std::size_t>(indices.begin(), indices.end())};
}

}  // namespace ecp
