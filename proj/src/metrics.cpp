#include "ecp/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ecp/mac_counter.hpp"
#include "ecp/rng.hpp"
#include "kernels.hpp"

namespace ecp {

std::uint64_t count_conv_macs(const ConvGeometry& g, ConvVariant variant) {
  const std::uint64_t per_window = static_cast<std::uint64_t>(g.out_channels) * g.in_channels *
                                   g.kernel_h * g.kernel_w;
  if (variant == ConvVariant::Conventional)
    return static_cast<std::uint64_t>(g.out_h) * g.out_w * per_window;
  if (g.out_h % 2 != 0 || g.out_w % 2 != 0)
    throw std::invalid_argument("easy convolution needs even output extents");
  return static_cast<std::uint64_t>(g.out_h / 2) * (g.out_w / 2) * per_window;
}

std::vector<LayerMacs> network_conv_macs(const Network& net) {
  std::vector<LayerMacs> out;
  for (const Stage& stage : net.stages()) {
    const auto* conv = std::get_if<ConvStage>(&stage);
    if (conv == nullptr) continue;
    const Parameter& w = net.parameters()[conv->weight];
    const Shape& ws = w.value.shape();
    const ConvGeometry g{ws[1],
                         ws[0],
                         conv->input[1] - ws[2] + 1,
                         conv->input[2] - ws[3] + 1,
                         ws[2],
                         ws[3]};
    const std::uint64_t conventional = count_conv_macs(g, ConvVariant::Conventional);
    const std::uint64_t actual =
        conv->fused ? count_conv_macs(g, ConvVariant::Easy) : conventional;
    out.push_back({w.name.substr(0, w.name.find('.')), g, conventional, actual});
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty sequence");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

PureConvBench bench_pure_conv(const NetworkConfig& cfg, std::size_t reps, std::uint64_t seed,
                              std::size_t images) {
  if (reps == 0) throw std::invalid_argument("bench needs reps >= 1");
  if (images == 0) throw std::invalid_argument("bench needs images >= 1");

  // Conventional geometry of the same architecture; the easy variant evaluates
  // the same layers on the mode-k grid.
  NetworkConfig conventional = cfg;
  conventional.pooling = Pooling::Max;
  conventional.mode.reset();
  conventional.layer_modes.clear();
  const Network shape_source = build_network_skeleton(conventional, {});
  const ModeK k = cfg.mode && cfg.mode->fixed ? *cfg.mode->fixed : ModeK(0);

  struct Layer {
    kernels::ConvDims dims;
    Tensor weights, bias, inputs;
  };
  std::vector<Layer> layers;
  Rng rng = Rng::derive(seed, 7);
  for (const Stage& stage : shape_source.stages()) {
    const auto* conv = std::get_if<ConvStage>(&stage);
    if (conv == nullptr) continue;
    const Shape& ws = shape_source.parameters()[conv->weight].value.shape();
    Layer layer{{conv->input[0], conv->input[1], conv->input[2], ws[0], ws[2], ws[3]},
                glorot_uniform(ws, ws[1] * ws[2] * ws[3], ws[0] * ws[2] * ws[3], rng),
                uniform_tensor(Shape{ws[0]}, -0.1, 0.1, rng),
                uniform_tensor(Shape{images, conv->input[0], conv->input[1], conv->input[2]},
                               0.0, 1.0, rng)};
    layers.push_back(std::move(layer));
  }

  // Images are lowered in chunks of about kWidth output columns, so both
  // variants multiply matrices of the same width.
  constexpr std::size_t kWidth = 256;
  std::vector<double> cols, out;
  auto run = [&](bool easy) {
    MacCounter counter;
    const auto start = std::chrono::steady_clock::now();
    for (const Layer& l : layers) {
      const auto& d = l.dims;
      const std::size_t oh = d.height - d.kernel_h + 1, ow = d.width - d.kernel_w + 1;
      const kernels::Grid g = easy ? kernels::Grid{k.row_offset(), k.col_offset(), 2, oh / 2, ow / 2}
                                   : kernels::Grid{0, 0, 1, oh, ow};
      const std::size_t P = g.positions(), per = d.in_channels * d.height * d.width;
      const std::size_t kChunk = std::max<std::size_t>(1, kWidth / P);
      cols.resize(d.patch() * P * kChunk);
      out.resize(d.out_channels * P * kChunk);
      for (std::size_t first = 0; first < images; first += kChunk) {
        const std::size_t n = std::min(kChunk, images - first);
        for (std::size_t i = 0; i < n; ++i)
          kernels::im2col(l.inputs.data().data() + (first + i) * per, d, g, cols.data() + i * P,
                          n * P);
        kernels::conv_forward(cols.data(), l.weights.data().data(), l.bias.data().data(), d,
                              n * P, out.data());
      }
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return std::pair{ms, counter.tally().conv_forward};
  };

  PureConvBench result;
  result.images = images;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto [conv_ms, conv_macs] = run(false);
    const auto [easy_ms, easy_macs] = run(true);
    result.conventional_ms.push_back(conv_ms);
    result.easy_ms.push_back(easy_ms);
    result.conventional_macs = conv_macs;
    result.easy_macs = easy_macs;
  }
  result.conventional_median_ms = median(result.conventional_ms);
  result.easy_median_ms = median(result.easy_ms);
  result.speedup = result.easy_median_ms > 0.0
                       ? result.conventional_median_ms / result.easy_median_ms
                       : 0.0;
  return result;
}

RunRow make_row(const Network& net, const EpochStats& stats) {
  RunRow row;
  row.epoch = stats.epoch;
  row.train_loss = stats.train_loss;
  row.test_accuracy = stats.test_accuracy;
  row.train_ms = stats.train_ms();
  row.test_ms = stats.eval_ms;
  row.pureconv_ms = stats.conv_ms;
  for (const LayerMacs& l : network_conv_macs(net)) row.macs_conventional += l.conventional;
  if (stats.samples > 0) {
    if (stats.macs.conv_forward % stats.samples != 0)
      throw std::logic_error("conv MAC tally is not a whole number per image");
    row.macs_actual = stats.macs.conv_forward / stats.samples;
  }
  return row;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const RunReport& report, std::ostream& out) {
  out << kCsvHeader << '\n';
  for (const RunRow& r : report.rows) {
    out << r.epoch << ',' << fixed6(r.train_loss) << ',' << fixed6(r.test_accuracy) << ','
        << fixed6(r.train_ms) << ',' << fixed6(r.test_ms) << ',' << fixed6(r.pureconv_ms) << ','
        << r.macs_conventional << ',' << r.macs_actual << '\n';
  }
}

void write_metrics_csv(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write metrics CSV '" + path.string() + "'");
  write_metrics_csv(report, out);
  out.flush();
  if (!out) throw std::runtime_error("failed writing metrics CSV '" + path.string() + "'");
}

std::vector<RunRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open metrics CSV '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader)
    throw std::runtime_error("'" + path.string() + "': missing or unexpected CSV header");
  std::vector<RunRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    RunRow r;
    char c1, c2, c3, c4, c5, c6, c7;
    fields >> r.epoch >> c1 >> r.train_loss >> c2 >> r.test_accuracy >> c3 >> r.train_ms >> c4 >>
        r.test_ms >> c5 >> r.pureconv_ms >> c6 >> r.macs_conventional >> c7 >> r.macs_actual;
    if (!fields || c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',' || c5 != ',' || c6 != ',' ||
        c7 != ',')
      throw std::runtime_error("'" + path.string() + "': malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

std::string format_table(const RunReport& report) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%5s  %10s  %8s  %12s  %10s  %12s  %10s  %10s\n", "epoch",
                "loss", "acc(%)", "train_ms", "test_ms", "pureconv_ms", "mac_conv", "mac_run");
  out += buf;
  for (const RunRow& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%5zu  %10.6f  %8.2f  %12.1f  %10.1f  %12.1f  %10llu  %10llu\n",
                  r.epoch, r.train_loss, 100.0 * r.test_accuracy, r.train_ms, r.test_ms,
                  r.pureconv_ms, static_cast<unsigned long long>(r.macs_conventional),
                  static_cast<unsigned long long>(r.macs_actual));
    out += buf;
  }
  return out;
}

}  // namespace ecp
