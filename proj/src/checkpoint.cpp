#include "ecp/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

namespace ecp {

namespace {

constexpr std::array<char, 4> kMagic = {'E', 'C', 'P', 'N'};
// Guards against absurd allocations from corrupt length fields.
constexpr std::uint32_t kMaxText = 1u << 20;
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
           (std::uint32_t{b[3]} << 24);
  }

  double f64(const char* what) {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{b[i]} << (8 * i);
    return std::bit_cast<double>(bits);
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
};

}  // namespace

void write_checkpoint(const Network& net, std::ostream& out) {
  NetworkConfig cfg = net.config();
  cfg.layer_modes = net.modes();
  const std::string text = cfg.to_text();

  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter& p : net.parameters()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& dims = p.value.shape().dims();
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (std::size_t d : dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) put_f64(out, v);
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

Network read_checkpoint(std::istream& in) {
  Reader r(in);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw std::runtime_error("not a checkpoint: bad magic bytes");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t text_len = r.u32("config length");
  if (text_len > kMaxText) throw std::runtime_error("checkpoint config block too large");
  std::string text(text_len, '\0');
  r.bytes(text.data(), text_len, "config");
  const NetworkConfig cfg = NetworkConfig::from_text(text);
  Network net = build_network_skeleton(cfg, cfg.layer_modes);

  std::set<std::string> loaded;
  while (!r.at_end()) {
    const std::uint32_t name_len = r.u32("parameter name length");
    if (name_len > kMaxText) throw std::runtime_error("checkpoint parameter name too long");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "parameter name");
    Tensor* target = nullptr;
    try {
      target = &net.parameter(name);
    } catch (const std::out_of_range&) {
      throw std::runtime_error("checkpoint has unknown parameter '" + name + "'");
    }
    if (!loaded.insert(name).second)
      throw std::runtime_error("checkpoint repeats parameter '" + name + "'");

    const std::uint32_t rank = r.u32("parameter rank");
    if (rank == 0 || rank > kMaxRank) throw std::runtime_error("checkpoint rank out of range");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = r.u32("parameter extent");
    if (dims != target->shape().dims())
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               Shape(dims).to_string() + ", config expects " +
                               target->shape().to_string());
    for (double& v : target->data()) v = r.f64("parameter data");
  }
  if (loaded.size() != net.parameters().size())
    throw std::runtime_error("checkpoint truncated: " + std::to_string(loaded.size()) + " of " +
                             std::to_string(net.parameters().size()) + " parameters present");
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  write_checkpoint(net, out);
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  try {
    return read_checkpoint(in);
  } catch (const std::exception& e) {
    throw std::runtime_error("'" + path.string() + "': " + e.what());
  }
}

}  // namespace ecp
