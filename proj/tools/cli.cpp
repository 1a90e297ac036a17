#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "ecp/checkpoint.hpp"
#include "ecp/gradcheck.hpp"
#include "ecp/metrics.hpp"
#include "ecp/mnist.hpp"
#include "ecp/network.hpp"
#include "ecp/trainer.hpp"

namespace ecp::cli {

namespace {

// Raised for bad flag combinations and missing inputs; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string arch = "conv2";
  std::string pool = "ecp";
  std::string mode_k;
  std::size_t epochs = 100;
  std::size_t batch_size = 50;
  double lr = 0.001;
  std::uint64_t seed = 1;
  std::string data_dir;
  std::string out = "ecp_metrics.csv";
  std::string checkpoint = "ecp_model.ckpt";
  std::size_t reps = 5;
  std::size_t images = 500;
  std::string reduction = "sum";
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t instances = 20;
  std::string inject_fault;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::optional<ModeChoice> parse_mode(const std::string& text) {
  if (text.empty()) return std::nullopt;
  if (text == "random") return ModeChoice::seeded_random();
  if (text.size() == 1 && text[0] >= '0' && text[0] <= '3') return ModeChoice::of(ModeK(text[0] - '0'));
  throw UsageError("--mode-k must be 0, 1, 2, 3 or random, got '" + text + "'");
}

NetworkConfig network_config(const Options& o) {
  NetworkConfig cfg;
  try {
    cfg.arch = parse_arch(o.arch);
    cfg.pooling = parse_pooling(o.pool);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto mode = parse_mode(o.mode_k);
  if (mode && !cfg.uses_mode())
    throw UsageError("--mode-k requires --pool random or --pool ecp");
  if (cfg.uses_mode()) cfg.mode = mode.value_or(ModeChoice::seeded_random());
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::filesystem::path resolve_data_dir(const Options& o) {
  std::filesystem::path dir;
  if (!o.data_dir.empty()) {
    dir = o.data_dir;
  } else if (auto env = data_dir_from_env()) {
    dir = *env;
  } else {
    throw UsageError("no MNIST directory: pass --data-dir or set ECP_DATA_DIR");
  }
  if (!std::filesystem::is_directory(dir))
    throw UsageError("MNIST directory '" + dir.string() + "' does not exist");
  return dir;
}

std::string join_modes(const std::vector<ModeK>& modes) {
  std::string s;
  for (std::size_t i = 0; i < modes.size(); ++i) s += (i ? "," : "") + std::to_string(modes[i].value());
  return s.empty() ? "-" : s;
}

std::string describe(const Network& net) {
  const NetworkConfig& c = net.config();
  std::string mode = "-";
  if (c.mode) mode = c.mode->is_random() ? "random" : std::to_string(c.mode->fixed->value());
  return "arch=" + std::string(to_string(c.arch)) + " pool=" + std::string(to_string(c.pooling)) +
         " mode_k=" + mode + " realized_k=" + join_modes(net.modes());
}

int run_train(const Options& o, std::ostream& out) {
  const NetworkConfig cfg = network_config(o);
  TrainConfig tc;
  tc.batch_size = o.batch_size;
  tc.learning_rate = o.lr;
  tc.epochs = o.epochs;
  tc.seed = o.seed;
  if (o.reduction == "sum") tc.reduction = Reduction::Sum;
  else if (o.reduction == "mean") tc.reduction = Reduction::Mean;
  else throw UsageError("--reduction must be sum or mean");
  if (o.batch_size == 0) throw UsageError("--batch-size must be >= 1");
  if (!(o.lr > 0.0)) throw UsageError("--lr must be > 0");
  if (o.epochs == 0) throw UsageError("--epochs must be >= 1");
  const auto dir = resolve_data_dir(o);

  Dataset train_set = load_mnist_train(dir);
  Dataset test_set = load_mnist_test(dir);
  if (o.train_limit) train_set = train_set.head(o.train_limit);
  if (o.test_limit) test_set = test_set.head(o.test_limit);

  Network net = build_network(cfg, o.seed);
  out << "config: " << describe(net) << " seed=" << o.seed << " epochs=" << tc.epochs
      << " batch_size=" << tc.batch_size << " lr=" << tc.learning_rate
      << " reduction=" << o.reduction << " train_samples=" << train_set.size()
      << " test_samples=" << test_set.size() << "\n";

  RunReport report;
  NetworkConfig saved = net.config();
  saved.layer_modes = net.modes();
  report.config = saved.to_text();
  report.seed = o.seed;
  for (ModeK k : net.modes()) report.modes.push_back(k.value());

  out << format_table(report);
  const TrainingSummary summary = train(net, train_set, test_set, tc, [&](const EpochStats& s) {
    report.rows.push_back(make_row(net, s));
    RunReport last{report.config, report.seed, report.modes, {report.rows.back()}};
    const std::string table = format_table(last);
    out << table.substr(table.find('\n') + 1) << std::flush;
    // Rewritten every epoch so an interrupted run still leaves its history.
    write_metrics_csv(report, std::filesystem::path(o.out));
  });

  save_checkpoint(net, o.checkpoint);

  const auto at98 = first_epoch_reaching(summary.epochs, 0.98);
  out << "best_accuracy=" << fmt("%.2f", 100.0 * summary.best_accuracy) << "% (epoch "
      << summary.best_epoch << ")\n";
  out << "final_accuracy=" << fmt("%.4f", summary.epochs.back().test_accuracy) << "\n";
  out << "epoch_at_98=" << (at98 ? std::to_string(*at98) : std::string("not reached")) << "\n";
  out << "metrics: " << o.out << "\ncheckpoint: " << o.checkpoint << "\n";
  return kExitOk;
}

int run_eval(const Options& o, std::ostream& out) {
  if (!std::filesystem::exists(o.checkpoint))
    throw UsageError("checkpoint '" + o.checkpoint + "' not found");
  const Network net = load_checkpoint(o.checkpoint);
  const auto dir = resolve_data_dir(o);
  Dataset test_set = load_mnist_test(dir);
  if (o.test_limit) test_set = test_set.head(o.test_limit);
  out << "config: " << describe(net) << " checkpoint=" << o.checkpoint
      << " test_samples=" << test_set.size() << "\n";
  double ms = 0.0;
  const double acc = evaluate(net, test_set, &ms);
  out << "test_accuracy=" << fmt("%.4f", acc) << "\n";
  out << "test_ms=" << fmt("%.1f", ms) << "\n";
  return kExitOk;
}

int run_bench_conv(const Options& o, std::ostream& out) {
  NetworkConfig cfg;
  try {
    cfg.arch = parse_arch(o.arch);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (o.reps == 0) throw UsageError("--reps must be >= 1");
  if (o.images == 0) throw UsageError("--images must be >= 1");
  // The mode only moves the sampling grid; resolve it like a training run.
  cfg.pooling = Pooling::Ecp;
  cfg.mode = parse_mode(o.mode_k).value_or(ModeChoice::seeded_random());
  const ModeK k = build_network(cfg, o.seed).modes().front();
  cfg.mode = ModeChoice::of(k);

  out << "config: arch=" << to_string(cfg.arch) << " realized_k=" << k.value()
      << " seed=" << o.seed << " reps=" << o.reps << " images=" << o.images << "\n";
  const PureConvBench b = bench_pure_conv(cfg, o.reps, o.seed, o.images);
  const double mac_ratio =
      static_cast<double>(b.easy_macs) / static_cast<double>(b.conventional_macs);
  out << "conventional_ms=" << fmt("%.3f", b.conventional_median_ms) << " (median of "
      << o.reps << ")\n";
  out << "ecp_ms=" << fmt("%.3f", b.easy_median_ms) << " (median of " << o.reps << ")\n";
  out << "speedup=" << fmt("%.2f", b.speedup) << "x\n";
  out << "macs_conventional=" << b.conventional_macs << " macs_ecp=" << b.easy_macs
      << " mac_ratio=" << mac_ratio << "\n";
  out << "published reference (different hardware): conventional 4496.77 ms, "
         "ecp 883.65 ms (5.09x)\n";
  return kExitOk;
}

int run_gradcheck_cmd(const Options& o, std::ostream& out, std::ostream& err) {
  GradcheckOptions g;
  g.seed = o.seed;
  g.instances = o.instances;
  if (!o.inject_fault.empty()) g.inject_fault = o.inject_fault;
  if (g.instances == 0) throw UsageError("--instances must be >= 1");
  GradcheckReport report;
  try {
    report = run_gradcheck(g);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  out << "config: seed=" << g.seed << " instances=" << g.instances << " step=" << g.step
      << " tolerance=" << g.tolerance << "\n";
  char buf[128];
  for (const LayerGradcheck& l : report.layers) {
    std::snprintf(buf, sizeof buf, "%-12s instances=%-3zu worst_rel_error=%.3e  %s\n",
                  l.layer.c_str(), l.instances, l.worst_error, l.passed ? "PASS" : "FAIL");
    out << buf;
  }
  if (report.passed()) return kExitOk;
  for (const LayerGradcheck& l : report.layers)
    if (!l.passed) err << "gradcheck failed: " << l.layer << " relative error " << l.worst_error << "\n";
  return kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EasyConvPooling CNN trainer and benchmark harness", "ecp"};
  app.require_subcommand(1);
  Options o;

  auto add_net = [&](CLI::App* cmd) {
    cmd->add_option("--arch", o.arch, "conv1 or conv2")->capture_default_str();
    cmd->add_option("--mode-k", o.mode_k, "0, 1, 2, 3 or random");
    cmd->add_option("--seed", o.seed, "Run seed")->capture_default_str();
  };

  auto* train_cmd = app.add_subcommand("train", "Train on MNIST, write metrics CSV and checkpoint");
  add_net(train_cmd);
  train_cmd->add_option("--pool", o.pool, "max, avg, random or ecp")->capture_default_str();
  train_cmd->add_option("--epochs", o.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", o.batch_size)->capture_default_str();
  train_cmd->add_option("--lr", o.lr)->capture_default_str();
  train_cmd->add_option("--reduction", o.reduction, "Gradient of the batch loss: sum or mean")
      ->capture_default_str();
  train_cmd->add_option("--data-dir", o.data_dir, "MNIST IDX directory (or ECP_DATA_DIR)");
  train_cmd->add_option("--out", o.out, "Metrics CSV path")->capture_default_str();
  train_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path")->capture_default_str();
  train_cmd->add_option("--train-limit", o.train_limit, "Use only the first N training images");
  train_cmd->add_option("--test-limit", o.test_limit, "Use only the first N test images");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the MNIST test set");
  eval_cmd->add_option("--checkpoint", o.checkpoint)->required();
  eval_cmd->add_option("--data-dir", o.data_dir, "MNIST IDX directory (or ECP_DATA_DIR)");
  eval_cmd->add_option("--test-limit", o.test_limit, "Use only the first N test images");

  auto* bench_cmd = app.add_subcommand("bench-conv", "Time conventional vs easy convolution");
  add_net(bench_cmd);
  bench_cmd->add_option("--reps", o.reps)->capture_default_str();
  bench_cmd->add_option("--images", o.images, "Images per rep")->capture_default_str();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every layer");
  grad_cmd->add_option("--seed", o.seed)->capture_default_str();
  grad_cmd->add_option("--instances", o.instances)->capture_default_str();
  grad_cmd->add_option("--inject-fault", o.inject_fault, "Corrupt one layer's gradient (test hook)")
      ->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(o, out);
    if (*eval_cmd) return run_eval(o, out);
    if (*bench_cmd) return run_bench_conv(o, out);
    return run_gradcheck_cmd(o, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace ecp::cli
