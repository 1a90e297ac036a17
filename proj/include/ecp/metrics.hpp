#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ecp/network.hpp"
#include "ecp/trainer.hpp"

namespace ecp {

/// One convolution layer: output extent is the full stride-1 valid output.
struct ConvGeometry {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t out_h;
  std::size_t out_w;
  std::size_t kernel_h;
  std::size_t kernel_w;
};

enum class ConvVariant { Conventional, Easy };

/// Closed-form MACs per image: out_h*out_w*C_out*C_in*kh*kw, or a quarter of
/// the positions for the easy convolution (even extents required).
std::uint64_t count_conv_macs(const ConvGeometry& g, ConvVariant variant);

struct LayerMacs {
  std::string name;
  ConvGeometry geometry;
  std::uint64_t conventional;
  std::uint64_t actual;  // what this network's variant executes
};

/// Per conv layer of `net`, per image forward pass.
std::vector<LayerMacs> network_conv_macs(const Network& net);

struct PureConvBench {
  std::vector<double> conventional_ms;  // one entry per rep
  std::vector<double> easy_ms;
  double conventional_median_ms = 0.0;
  double easy_median_ms = 0.0;
  double speedup = 0.0;                 // conventional / easy medians
  std::uint64_t conventional_macs = 0;  // counted during one rep
  std::uint64_t easy_macs = 0;
  std::size_t images = 0;
};

/// Times only the conv-layer forward work of cfg's architecture for both
/// variants on identical seeded inputs and weights; reports medians.
PureConvBench bench_pure_conv(const NetworkConfig& cfg, std::size_t reps, std::uint64_t seed,
                              std::size_t images = 500);

double median(std::vector<double> values);

struct RunRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double train_ms = 0.0;
  double test_ms = 0.0;
  double pureconv_ms = 0.0;
  std::uint64_t macs_conventional = 0;  // conv forward MACs per image, conventional conv
  std::uint64_t macs_actual = 0;        // conv forward MACs per image, as counted

  friend bool operator==(const RunRow&, const RunRow&) = default;
};

struct RunReport {
  std::string config;  // NetworkConfig text with realized modes
  std::uint64_t seed = 0;
  std::vector<int> modes;
  std::vector<RunRow> rows;
};

RunRow make_row(const Network& net, const EpochStats& stats);

inline constexpr const char* kCsvHeader =
    "epoch,train_loss,test_accuracy,train_ms,test_ms,pureconv_ms,macs_conventional,macs_actual";

/// Header plus one row per epoch; floats with 6 decimals, LF endings.
void write_metrics_csv(const RunReport& report, std::ostream& out);
void write_metrics_csv(const RunReport& report, const std::filesystem::path& path);
std::vector<RunRow> read_metrics_csv(const std::filesystem::path& path);

/// Fixed-width table of the rows for terminal output.
std::string format_table(const RunReport& report);

}  // namespace ecp
