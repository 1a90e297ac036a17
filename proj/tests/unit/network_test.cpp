#include "support.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include "ecp/layers.hpp"
#include "ecp/network.hpp"

using namespace ecp;
using testing::seeded_tensor;

namespace {

NetworkConfig config(Arch arch, Pooling pooling, std::optional<int> k = std::nullopt) {
  NetworkConfig cfg;
  cfg.arch = arch;
  cfg.pooling = pooling;
  if (k) cfg.mode = ModeChoice::of(ModeK(*k));
  return cfg;
}

// Small two-conv stack: 14 -> 12 -> 6 -> 4 -> 2.
NetworkConfig tiny(Pooling pooling, std::optional<int> k = std::nullopt) {
  NetworkConfig cfg = config(Arch::TwoConv, pooling, k);
  cfg.input_size = 14;
  cfg.kernel = 3;
  cfg.conv_channels = {2, 3};
  cfg.hidden = 6;
  cfg.classes = 4;
  return cfg;
}

void randomize(Network& net, std::uint64_t seed) {
  for (Parameter& p : net.parameters()) p.value = seeded_tensor(p.value.shape(), seed++, -0.5, 0.5);
}

std::vector<Shape> shapes(std::initializer_list<Shape> list) { return list; }

}  // namespace

TEST_SUITE("network") {

TEST_CASE("two-conv shape chain") {
  const Network net = build_network(config(Arch::TwoConv, Pooling::Max), 1);
  CHECK(net.shape_chain() == shapes({{1, 28, 28}, {20, 24, 24}, {20, 12, 12}, {32, 8, 8},
                                     {32, 4, 4}, {512}, {100}, {10}}));
  CHECK(net.modes().empty());
  std::vector<std::string> names;
  for (const Parameter& p : net.parameters()) names.push_back(p.name);
  CHECK(names == std::vector<std::string>{"conv1.weight", "conv1.bias", "conv2.weight",
                                          "conv2.bias", "fc1.weight", "fc1.bias", "fc2.weight",
                                          "fc2.bias"});
  CHECK(net.parameter("conv2.weight").shape() == Shape{32, 20, 5, 5});
  CHECK(net.parameter("fc1.weight").shape() == Shape{100, 512});
  CHECK_THROWS_AS(net.parameter("conv3.weight"), std::out_of_range);
}

TEST_CASE("one-conv ecp shape chain") {
  const Network net = build_network(config(Arch::OneConv, Pooling::Ecp, 2), 1);
  CHECK(net.shape_chain() == shapes({{1, 28, 28}, {20, 12, 12}, {2880}, {100}, {10}}));
  CHECK(net.modes() == std::vector<ModeK>{ModeK(2)});
  const Network pooled = build_network(config(Arch::OneConv, Pooling::Avg), 1);
  CHECK(pooled.shape_chain() == shapes({{1, 28, 28}, {20, 24, 24}, {20, 12, 12}, {2880}, {100}, {10}}));
}

TEST_CASE("layer order is conv, pool, relu") {
  const Network net = build_network(config(Arch::TwoConv, Pooling::Max), 1);
  const auto& st = net.stages();
  REQUIRE(st.size() == 10);
  CHECK(std::holds_alternative<ConvStage>(st[0]));
  CHECK(std::holds_alternative<PoolStage>(st[1]));
  CHECK(std::holds_alternative<ReluStage>(st[2]));
  CHECK(std::holds_alternative<FlattenStage>(st[6]));
  CHECK(std::holds_alternative<DenseStage>(st[7]));
  CHECK(std::holds_alternative<ReluStage>(st[8]));
  CHECK(std::holds_alternative<DenseStage>(st[9]));

  const Network fused = build_network(config(Arch::TwoConv, Pooling::Ecp, 1), 1);
  CHECK(fused.stages().size() == 8);
  CHECK(std::get<ConvStage>(fused.stages()[0]).fused == ModeK(1));
  CHECK(std::get<ConvStage>(fused.stages()[2]).fused == ModeK(1));
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(build_network(config(Arch::TwoConv, Pooling::Max, 2), 1), std::invalid_argument);
  CHECK_THROWS_AS(build_network(config(Arch::TwoConv, Pooling::Ecp), 1), std::invalid_argument);
  NetworkConfig odd = config(Arch::TwoConv, Pooling::Max);
  odd.input_size = 26;  // 26 -> 22 -> 11 -> 7: odd before the second pool
  CHECK_THROWS_AS(odd.validate(), std::invalid_argument);
  NetworkConfig wrong_modes = config(Arch::TwoConv, Pooling::Ecp, 0);
  wrong_modes.layer_modes = {ModeK(1)};
  CHECK_THROWS_AS(wrong_modes.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_arch("conv3"), std::invalid_argument);
  CHECK_THROWS_AS(parse_pooling("min"), std::invalid_argument);
  CHECK(parse_arch("conv1") == Arch::OneConv);
  CHECK(parse_arch("two_conv") == Arch::TwoConv);
  CHECK(parse_pooling("ecp") == Pooling::Ecp);
}

TEST_CASE("config text round trip") {
  NetworkConfig cfg = tiny(Pooling::Ecp, 3);
  cfg.layer_modes = {ModeK(1), ModeK(2)};
  const NetworkConfig back = NetworkConfig::from_text(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.layer_modes == cfg.layer_modes);
  CHECK(back.mode->fixed == ModeK(3));
  CHECK_THROWS_AS(NetworkConfig::from_text("arch=two_conv\ncolour=blue\n"), std::invalid_argument);
}

TEST_CASE("initialization is seeded glorot uniform") {
  const NetworkConfig cfg = config(Arch::TwoConv, Pooling::Max);
  const Network a = build_network(cfg, 7);
  const Network b = build_network(cfg, 7);
  const Network c = build_network(cfg, 8);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(a.parameters()[i].value == b.parameters()[i].value);
    if (a.parameters()[i].name.ends_with(".weight"))
      CHECK_FALSE(a.parameters()[i].value == c.parameters()[i].value);
  }
  const auto bound = [](double fan_in, double fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); };
  const std::vector<std::pair<std::string, double>> limits = {
      {"conv1.weight", bound(25, 500)}, {"conv2.weight", bound(500, 800)},
      {"fc1.weight", bound(512, 100)}, {"fc2.weight", bound(100, 10)}};
  for (const auto& [name, r] : limits) {
    double largest = 0.0;
    for (double v : a.parameter(name).values()) largest = std::max(largest, std::abs(v));
    CHECK(largest <= r);
    CHECK(largest > 0.9 * r);
  }
  for (const char* bias : {"conv1.bias", "conv2.bias", "fc1.bias", "fc2.bias"})
    CHECK(a.parameter(bias) == Tensor::zeros(a.parameter(bias).shape()));
}

TEST_CASE("seeded random mode") {
  NetworkConfig cfg = config(Arch::TwoConv, Pooling::Ecp);
  cfg.mode = ModeChoice::seeded_random();
  std::set<int> drawn;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Network net = build_network(cfg, seed);
    REQUIRE(net.modes().size() == 2);
    CHECK(net.modes()[0] == net.modes()[1]);
    CHECK(build_network(cfg, seed).modes() == net.modes());
    drawn.insert(net.modes()[0].value());
  }
  CHECK(drawn.size() == 4);

  NetworkConfig per_layer = config(Arch::TwoConv, Pooling::Ecp, 0);
  per_layer.layer_modes = {ModeK(3), ModeK(1)};
  CHECK(build_network(per_layer, 1).modes() == std::vector<ModeK>{ModeK(3), ModeK(1)});
}

TEST_CASE("forward shapes and zero propagation") {
  const Network net = build_network(config(Arch::TwoConv, Pooling::Ecp, 0), 3);
  const Tensor logits = net.forward(seeded_tensor(Shape{3, 1, 28, 28}, 1, 0.0, 1.0));
  CHECK(logits.shape() == Shape{3, 10});
  CHECK(all_finite(logits));
  CHECK(net.forward(Tensor::zeros(Shape{2, 1, 28, 28})) == Tensor::zeros(Shape{2, 10}));
  CHECK_THROWS_AS(net.forward(Tensor::zeros(Shape{2, 1, 27, 28})), std::invalid_argument);
  CHECK_THROWS_AS(net.forward(Tensor::zeros(Shape{1, 28, 28})), std::invalid_argument);
}

TEST_CASE("forward of a batch equals per-sample logits") {
  const Network net = build_network(config(Arch::OneConv, Pooling::Max), 3);
  const Tensor batch = seeded_tensor(Shape{4, 1, 28, 28}, 2, 0.0, 1.0);
  const Tensor logits = net.forward(batch);
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor one = net.forward(batch.slice(i).reshaped(Shape{1, 1, 28, 28}));
    CHECK(one.values() == logits.slice(i).values());
  }
}

TEST_CASE("ecp network equals conv plus random pooling end to end") {
  for (int k = 0; k < 4; ++k) {
    Network fused = build_network(config(Arch::TwoConv, Pooling::Ecp, k), 1);
    Network reference = build_network(config(Arch::TwoConv, Pooling::Random, k), 1);
    randomize(fused, 10 * k);
    for (std::size_t i = 0; i < fused.parameters().size(); ++i)
      reference.parameters()[i].value = fused.parameters()[i].value;

    const Tensor batch = seeded_tensor(Shape{3, 1, 28, 28}, 40 + k, 0.0, 1.0);
    ForwardTrace tf, tr;
    const Tensor lf = fused.forward_train(batch, tf);
    const Tensor lr = reference.forward_train(batch, tr);
    CHECK(max_relative_error(lf, lr) <= 1e-12);
    CHECK(lf == fused.forward(batch));

    const Tensor dlogits = seeded_tensor(lf.shape(), 90 + k);
    const auto gf = fused.backward(tf, dlogits);
    const auto gr = reference.backward(tr, dlogits);
    REQUIRE(gf.size() == gr.size());
    for (std::size_t i = 0; i < gf.size(); ++i) CHECK(max_relative_error(gf[i], gr[i]) <= 1e-10);
  }
}

TEST_CASE("network gradients match finite differences") {
  for (Pooling pooling : {Pooling::Max, Pooling::Avg, Pooling::Random, Pooling::Ecp}) {
    const bool moded = pooling == Pooling::Random || pooling == Pooling::Ecp;
    Network net = build_network(tiny(pooling, moded ? std::optional<int>(1) : std::nullopt), 5);
    randomize(net, 300);
    const Tensor batch = seeded_tensor(Shape{2, 1, 14, 14}, 7, 0.0, 1.0);
    ForwardTrace trace;
    const Tensor logits = net.forward_train(batch, trace);
    const Tensor dlogits = seeded_tensor(logits.shape(), 8);
    const auto grads = net.backward(trace, dlogits);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      Network probe = net;
      const auto objective = [&](const Tensor& p) {
        probe.parameters()[i].value = p;
        return testing::dot(dlogits, probe.forward(batch));
      };
      const Tensor numeric = testing::central_difference(objective, net.parameters()[i].value);
      CHECK_MESSAGE(testing::norm_relative_error(grads[i], numeric) < 1e-5,
                    net.parameters()[i].name);
    }
  }
}

TEST_CASE("sgd step") {
  Network net = build_network(tiny(Pooling::Max), 1);
  const Network before = net;
  std::vector<Tensor> grads;
  for (const Parameter& p : net.parameters()) grads.push_back(Tensor::filled(p.value.shape(), 2.0));
  net.apply_sgd(grads, 0.25);
  for (std::size_t i = 0; i < grads.size(); ++i)
    CHECK(max_relative_error(net.parameters()[i].value,
                             before.parameters()[i].value - Tensor::filled(grads[i].shape(), 0.5)) < 1e-15);
  grads.pop_back();
  CHECK_THROWS_AS(net.apply_sgd(grads, 0.1), std::invalid_argument);
}

TEST_CASE("argmax ties go to the lowest class") {
  CHECK(argmax_class(std::vector<double>{0, 0, 0}) == 0);
  CHECK(argmax_class(std::vector<double>{1, 3, 3, 2}) == 1);
  CHECK(argmax_class(std::vector<double>{-1, -2, -0.5}) == 2);
}

}
