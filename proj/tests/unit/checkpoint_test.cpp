#include "support.hpp"

#include <fstream>
#include <sstream>

#include "ecp/checkpoint.hpp"

using namespace ecp;

namespace {

Network ecp_net(int k, std::uint64_t seed) {
  NetworkConfig cfg;
  cfg.pooling = Pooling::Ecp;
  cfg.mode = ModeChoice::of(ModeK(k));
  return build_network(cfg, seed);
}

std::string bytes_of(const Network& net) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(net, out);
  return out.str();
}

Network from_bytes(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_checkpoint(in);
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip is bitwise") {
  testing::TempDir dir;
  const Network net = ecp_net(1, 42);
  save_checkpoint(net, dir / "m.ckpt");
  const Network back = load_checkpoint(dir / "m.ckpt");
  REQUIRE(back.parameters().size() == net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    CHECK(back.parameters()[i].name == net.parameters()[i].name);
    CHECK(back.parameters()[i].value == net.parameters()[i].value);
  }
  CHECK(back.modes() == std::vector<ModeK>{ModeK(1), ModeK(1)});
  CHECK(back.config().pooling == Pooling::Ecp);
  const Tensor batch = testing::seeded_tensor(Shape{2, 1, 28, 28}, 3, 0.0, 1.0);
  CHECK(back.forward(batch) == net.forward(batch));
}

TEST_CASE("seeded random mode persists as realized") {
  NetworkConfig cfg;
  cfg.arch = Arch::OneConv;
  cfg.pooling = Pooling::Random;
  cfg.mode = ModeChoice::seeded_random();
  const Network net = build_network(cfg, 17);
  CHECK(from_bytes(bytes_of(net)).modes() == net.modes());
}

TEST_CASE("layout") {
  const std::string b = bytes_of(ecp_net(2, 1));
  CHECK(b.substr(0, 4) == "ECPN");
  CHECK(b.substr(4, 4) == std::string("\x01\x00\x00\x00", 4));
  const std::uint32_t text_len = static_cast<unsigned char>(b[8]) |
                                 static_cast<unsigned char>(b[9]) << 8;
  const std::string first = b.substr(12 + text_len, 4 + 12);
  CHECK(first.substr(4) == "conv1.weight");
}

TEST_CASE("corrupt inputs are rejected") {
  const std::string good = bytes_of(ecp_net(0, 1));

  std::string magic = good;
  magic[0] = 'X';
  CHECK_THROWS_WITH_AS(from_bytes(magic), doctest::Contains("magic"), std::runtime_error);

  std::string version = good;
  version[4] = 2;
  CHECK_THROWS_WITH_AS(from_bytes(version), doctest::Contains("version"), std::runtime_error);

  CHECK_THROWS_WITH_AS(from_bytes(good.substr(0, good.size() - 3)), doctest::Contains("truncated"),
                       std::runtime_error);
  CHECK_THROWS_AS(from_bytes(good.substr(0, 10)), std::runtime_error);

  // Drop the last parameter record entirely: fc2.bias is 10 doubles.
  const std::size_t record = 4 + 8 + 4 + 4 + 10 * 8;
  CHECK_THROWS_WITH_AS(from_bytes(good.substr(0, good.size() - record)),
                       doctest::Contains("parameters present"), std::runtime_error);

  CHECK_THROWS_AS(from_bytes(good + good.substr(good.size() - record)), std::runtime_error);
}

TEST_CASE("file errors name the path") {
  testing::TempDir dir;
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "absent.ckpt"), doctest::Contains("absent.ckpt"),
                       std::runtime_error);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "junk.ckpt"), doctest::Contains("junk.ckpt"),
                       std::runtime_error);
}

}
