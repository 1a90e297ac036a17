#pragma once

// Oracles and fixtures shared by the unit tests. Everything here is written
// independently of the library kernels: plain loops, std::mt19937_64.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include <unistd.h>

#include "ecp/tensor.hpp"

namespace testing {

inline ecp::Tensor seeded_tensor(const ecp::Shape& shape, std::uint64_t seed, double lo = -1.0,
                                 double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  ecp::Tensor t = ecp::Tensor::zeros(shape);
  for (double& v : t.data()) v = dist(gen);
  return t;
}

// y[o][m][n] = b[o] + sum_{c,u,v} w[o][c][u][v] * x[c][m+u][n+v]
inline ecp::Tensor naive_conv(const ecp::Tensor& x, const ecp::Tensor& w, const ecp::Tensor& b) {
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const std::size_t O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const std::size_t oh = H - kh + 1, ow = W - kw + 1;
  ecp::Tensor y = ecp::Tensor::zeros(ecp::Shape{O, oh, ow});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t m = 0; m < oh; ++m)
      for (std::size_t n = 0; n < ow; ++n) {
        double acc = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) acc += w.at(o, c, u, v) * x.at(c, m + u, n + v);
        y.at(o, m, n) = acc;
      }
  return y;
}

// Brute-force 2x2 stride-2 block reduction.
inline ecp::Tensor block_reduce(const ecp::Tensor& x,
                                const std::function<double(double, double, double, double)>& f) {
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  ecp::Tensor y = ecp::Tensor::zeros(ecp::Shape{C, H / 2, W / 2});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H / 2; ++i)
      for (std::size_t j = 0; j < W / 2; ++j)
        y.at(c, i, j) = f(x.at(c, 2 * i, 2 * j), x.at(c, 2 * i, 2 * j + 1),
                          x.at(c, 2 * i + 1, 2 * j), x.at(c, 2 * i + 1, 2 * j + 1));
  return y;
}

// Central differences of a scalar function of `at`.
inline ecp::Tensor central_difference(const std::function<double(const ecp::Tensor&)>& f,
                                      const ecp::Tensor& at, double step = 1e-6) {
  ecp::Tensor g = ecp::Tensor::zeros(at.shape());
  ecp::Tensor probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + step;
    const double up = f(probe);
    probe[i] = at[i] - step;
    const double down = f(probe);
    probe[i] = at[i];
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double norm_relative_error(const ecp::Tensor& a, const ecp::Tensor& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

inline double dot(const ecp::Tensor& a, const ecp::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::optional<std::filesystem::path> mnist_dir() {
  std::string dir;
  if (const char* env = std::getenv("ECP_DATA_DIR"); env && *env) dir = env;
#ifdef ECP_TEST_MNIST_DIR
  if (dir.empty()) dir = ECP_TEST_MNIST_DIR;
#endif
  if (dir.empty() || !std::filesystem::is_directory(dir))
    return std::nullopt;
  return std::filesystem::path(dir);
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ecp_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
