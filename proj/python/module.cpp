#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ecp/checkpoint.hpp"
#include "ecp/gradcheck.hpp"
#include "ecp/layers.hpp"
#include "ecp/metrics.hpp"
#include "ecp/mnist.hpp"
#include "ecp/network.hpp"
#include "ecp/trainer.hpp"

namespace py = pybind11;
using namespace ecp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  std::vector<std::size_t> dims(a.shape(), a.shape() + a.ndim());
  return Tensor::from(Shape(std::move(dims)), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(t.shape().dims());
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

ConvFilter filter(const Array& weights, const Array& bias) {
  ConvFilter f{to_tensor(weights), to_tensor(bias)};
  f.validate();
  return f;
}

Dataset dataset(const Array& images, const std::vector<int>& labels) {
  Tensor t = to_tensor(images);
  if (t.shape().rank() == 3) t = std::move(t).reshaped(Shape{t.shape()[0], 1, t.shape()[1], t.shape()[2]});
  return Dataset(std::move(t), labels);
}

py::tuple dataset_tuple(const Dataset& d) { return py::make_tuple(to_array(d.images()), d.labels()); }

Reduction parse_reduction(const std::string& text) {
  if (text == "sum") return Reduction::Sum;
  if (text == "mean") return Reduction::Mean;
  throw std::invalid_argument("reduction must be 'sum' or 'mean', got '" + text + "'");
}

NetworkConfig make_config(const std::string& arch, const std::string& pooling,
                          std::optional<int> mode_k) {
  NetworkConfig cfg;
  cfg.arch = parse_arch(arch);
  cfg.pooling = parse_pooling(pooling);
  if (cfg.uses_mode()) cfg.mode = mode_k ? ModeChoice::of(ModeK(*mode_k)) : ModeChoice::seeded_random();
  else if (mode_k) throw std::invalid_argument("mode_k applies only to random and ecp pooling");
  return cfg;
}

std::vector<int> mode_values(const Network& net) {
  std::vector<int> out;
  for (ModeK k : net.modes()) out.push_back(k.value());
  return out;
}

py::dict epoch_dict(const EpochStats& s) {
  py::dict d;
  d["epoch"] = s.epoch;
  d["train_loss"] = s.train_loss;
  d["test_accuracy"] = s.test_accuracy;
  d["train_ms"] = s.train_ms();
  d["test_ms"] = s.eval_ms;
  d["conv_ms"] = s.conv_ms;
  d["samples"] = s.samples;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ecp, m) {
  m.doc() = "Easy convolution with random pooling: layers, networks, training and benchmarks";

  m.def("conv2d", [](const Array& x, const Array& w, const Array& b) {
    return to_array(conv2d_forward(to_tensor(x), filter(w, b)).first);
  }, py::arg("x"), py::arg("weights"), py::arg("bias"));
  m.def("easy_conv", [](const Array& x, const Array& w, const Array& b, int k) {
    return to_array(easy_conv_fused_forward(to_tensor(x), filter(w, b), ModeK(k)).first);
  }, py::arg("x"), py::arg("weights"), py::arg("bias"), py::arg("k"),
     "Convolution at the mode-k window positions only.");
  m.def("easy_conv_padded", [](const Array& x, const Array& w, const Array& b, int k) {
    return to_array(easy_conv_padded_forward(to_tensor(x), filter(w, b), ModeK(k)));
  }, py::arg("x"), py::arg("weights"), py::arg("bias"), py::arg("k"));
  m.def("max_pool", [](const Array& x) { return to_array(max_pool_forward(to_tensor(x)).first); });
  m.def("avg_pool", [](const Array& x) { return to_array(avg_pool_forward(to_tensor(x)).first); });
  m.def("random_pool", [](const Array& x, int k) {
    return to_array(random_pool_forward(to_tensor(x), ModeK(k)));
  }, py::arg("x"), py::arg("k"));
  m.def("relu", [](const Array& x) { return to_array(relu_forward(to_tensor(x)).first); });
  m.def("softmax_cross_entropy", [](const Array& logits, const std::vector<int>& labels,
                                    const std::string& reduction) {
    const SoftmaxLoss r = softmax_cross_entropy(to_tensor(logits), labels, parse_reduction(reduction));
    return py::make_tuple(r.loss, to_array(r.dlogits), to_array(r.probs));
  }, py::arg("logits"), py::arg("labels"), py::arg("reduction") = "mean");

  m.def("count_conv_macs", [](std::size_t in_c, std::size_t out_c, std::size_t out_h,
                              std::size_t out_w, std::size_t kh, std::size_t kw, bool easy) {
    return count_conv_macs({in_c, out_c, out_h, out_w, kh, kw},
                           easy ? ConvVariant::Easy : ConvVariant::Conventional);
  }, py::arg("in_channels"), py::arg("out_channels"), py::arg("out_h"), py::arg("out_w"),
     py::arg("kernel_h"), py::arg("kernel_w"), py::arg("easy") = false);

  py::class_<Network>(m, "Network")
      .def_property_readonly("arch", [](const Network& n) { return std::string(to_string(n.config().arch)); })
      .def_property_readonly("pooling", [](const Network& n) { return std::string(to_string(n.config().pooling)); })
      .def_property_readonly("modes", &mode_values)
      .def_property_readonly("config", [](const Network& n) { return n.config().to_text(); })
      .def("parameters", [](const Network& n) {
        py::dict d;
        for (const Parameter& p : n.parameters()) d[py::str(p.name)] = to_array(p.value);
        return d;
      })
      .def("set_parameter", [](Network& n, const std::string& name, const Array& value) {
        Tensor& t = n.parameter(name);
        Tensor v = to_tensor(value);
        if (v.shape() != t.shape())
          throw std::invalid_argument(name + ": expected shape " + t.shape().to_string() + ", got " +
                                      v.shape().to_string());
        t = std::move(v);
      }, py::arg("name"), py::arg("value"))
      .def("forward", [](const Network& n, const Array& batch) {
        const Tensor x = to_tensor(batch);
        Tensor y;
        {
          py::gil_scoped_release nogil;
          y = n.forward(x);
        }
        return to_array(y);
      }, py::arg("batch"), "Logits [B, classes] for a batch [B, 1, 28, 28].")
      .def("conv_macs", [](const Network& n) {
        py::list out;
        for (const LayerMacs& l : network_conv_macs(n)) {
          py::dict d;
          d["name"] = l.name;
          d["conventional"] = l.conventional;
          d["actual"] = l.actual;
          out.append(d);
        }
        return out;
      })
      .def("save", [](const Network& n, const std::filesystem::path& path) { save_checkpoint(n, path); },
           py::arg("path"));

  m.def("build_network", [](const std::string& arch, const std::string& pooling,
                            std::optional<int> mode_k, std::uint64_t seed) {
    return build_network(make_config(arch, pooling, mode_k), seed);
  }, py::arg("arch") = "two_conv", py::arg("pooling") = "ecp", py::arg("mode_k") = py::none(),
     py::arg("seed") = 1);
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def("load_mnist_train", [](const std::filesystem::path& dir) { return dataset_tuple(load_mnist_train(dir)); },
        py::arg("dir"));
  m.def("load_mnist_test", [](const std::filesystem::path& dir) { return dataset_tuple(load_mnist_test(dir)); },
        py::arg("dir"));

  m.def("evaluate", [](const Network& n, const Array& images, const std::vector<int>& labels) {
    const Dataset d = dataset(images, labels);
    py::gil_scoped_release nogil;
    return evaluate(n, d);
  }, py::arg("net"), py::arg("images"), py::arg("labels"));

  m.def("train", [](Network& n, const Array& train_images, const std::vector<int>& train_labels,
                    const Array& test_images, const std::vector<int>& test_labels,
                    std::size_t epochs, double learning_rate, std::size_t batch_size,
                    std::uint64_t seed, const std::string& reduction) {
    const Dataset tr = dataset(train_images, train_labels);
    const Dataset te = dataset(test_images, test_labels);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.learning_rate = learning_rate;
    cfg.batch_size = batch_size;
    cfg.seed = seed;
    cfg.reduction = parse_reduction(reduction);
    TrainingSummary s;
    {
      py::gil_scoped_release nogil;
      s = train(n, tr, te, cfg);
    }
    py::list rows;
    for (const EpochStats& e : s.epochs) rows.append(epoch_dict(e));
    return rows;
  }, py::arg("net"), py::arg("train_images"), py::arg("train_labels"), py::arg("test_images"),
     py::arg("test_labels"), py::arg("epochs") = 1, py::arg("learning_rate") = 0.001,
     py::arg("batch_size") = 50, py::arg("seed") = 1, py::arg("reduction") = "sum");

  m.def("bench_pure_conv", [](const std::string& arch, int mode_k, std::size_t reps,
                              std::uint64_t seed, std::size_t images) {
    const NetworkConfig cfg = make_config(arch, "ecp", mode_k);
    PureConvBench b;
    {
      py::gil_scoped_release nogil;
      b = bench_pure_conv(cfg, reps, seed, images);
    }
    py::dict d;
    d["conventional_ms"] = b.conventional_median_ms;
    d["easy_ms"] = b.easy_median_ms;
    d["speedup"] = b.speedup;
    d["conventional_macs"] = b.conventional_macs;
    d["easy_macs"] = b.easy_macs;
    d["images"] = b.images;
    return d;
  }, py::arg("arch") = "two_conv", py::arg("mode_k") = 0, py::arg("reps") = 5, py::arg("seed") = 7,
     py::arg("images") = 500);

  m.def("gradcheck", [](std::size_t instances, std::uint64_t seed) {
    GradcheckOptions o;
    o.instances = instances;
    o.seed = seed;
    GradcheckReport r;
    {
      py::gil_scoped_release nogil;
      r = run_gradcheck(o);
    }
    py::dict d;
    for (const LayerGradcheck& l : r.layers) d[py::str(l.layer)] = py::make_tuple(l.worst_error, l.passed);
    return d;
  }, py::arg("instances") = 20, py::arg("seed") = 1);
}
