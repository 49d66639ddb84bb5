#include "ifval/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ifval {

namespace {

constexpr char kMagic[4] = {'I', 'F', 'V', 'C'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kKindMlp = 0;
constexpr std::uint8_t kKindBnn = 1;

void write_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

void write_vec(std::ostream& out, const Vec& v) {
  write_u64(out, v.size());
  for (double x : v) write_f64(out, x);
}

std::uint8_t read_u8(std::istream& in) {
  const int c = in.get();
  if (c < 0) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint8_t>(c);
}

std::uint64_t read_u64(std::istream& in) {
  char buf[8];
  in.read(buf, 8);
  if (in.gcount() != 8) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  }
  return v;
}

double read_f64(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

Vec read_vec(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  if (n > (1ull << 32)) throw std::runtime_error("checkpoint: implausible array size");
  Vec v(n);
  for (auto& x : v) x = read_f64(in);
  return v;
}

void write_header(std::ostream& out, std::uint8_t kind, const ArchSpec& arch) {
  out.write(kMagic, 4);
  write_u8(out, kVersion);
  write_u8(out, kind);
  write_u64(out, arch.n_in);
  write_u64(out, arch.hidden_layers);
  write_u64(out, arch.hidden_width);
  write_u64(out, arch.n_out);
  write_u8(out, arch.activation == Activation::relu ? 0 : 1);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  return out;
}

// Per-layer [w_mean, b_mean] concatenation; logvars mirror it.
std::pair<Vec, Vec> bnn_arrays(const BnnModel& m) {
  Vec means, logvars;
  for (const auto& l : m.layers) {
    means.insert(means.end(), l.weight_mean.begin(), l.weight_mean.end());
    means.insert(means.end(), l.bias_mean.begin(), l.bias_mean.end());
    logvars.insert(logvars.end(), l.weight_logvar.begin(), l.weight_logvar.end());
    logvars.insert(logvars.end(), l.bias_logvar.begin(), l.bias_logvar.end());
  }
  return {std::move(means), std::move(logvars)};
}

}  // namespace

void save_checkpoint(const MlpModel& m, const std::string& path) {
  auto out = open_out(path);
  write_header(out, kKindMlp, m.arch);
  write_vec(out, m.params);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

void save_checkpoint(const BnnModel& m, const std::string& path) {
  auto out = open_out(path);
  write_header(out, kKindBnn, m.arch);
  write_f64(out, m.kl_weight);
  const auto [means, logvars] = bnn_arrays(m);
  write_vec(out, means);
  write_vec(out, logvars);
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

void save_checkpoint(const AnyModel& m, const std::string& path) {
  std::visit([&](const auto& model) { save_checkpoint(model, path); }, m);
}

AnyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const std::uint8_t version = read_u8(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  const std::uint8_t kind = read_u8(in);
  ArchSpec arch;
  arch.n_in = read_u64(in);
  arch.hidden_layers = read_u64(in);
  arch.hidden_width = read_u64(in);
  arch.n_out = read_u64(in);
  arch.activation = read_u8(in) == 0 ? Activation::relu : Activation::selu;

  if (kind == kKindMlp) {
    MlpModel m;
    m.arch = arch;
    m.layout = ParameterLayout::from(arch);
    m.params = read_vec(in);
    if (m.params.size() != m.layout.size) {
      throw std::runtime_error("checkpoint: parameter count mismatch");
    }
    return m;
  }
  if (kind != kKindBnn) {
    throw std::runtime_error("checkpoint: unknown model kind " +
                             std::to_string(kind));
  }
  const double kl_weight = read_f64(in);
  const Vec means = read_vec(in);
  const Vec logvars = read_vec(in);
  const ParameterLayout layout = ParameterLayout::from(arch);
  if (means.size() != layout.size || logvars.size() != layout.size) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  BnnModel m;
  m.arch = arch;
  m.kl_weight = kl_weight;
  std::size_t off = 0;
  for (const auto& shape : layout.layers) {
    VariationalLayer l;
    l.in = shape.in;
    l.out = shape.out;
    const std::size_t nw = shape.in * shape.out;
    l.weight_mean.assign(means.begin() + off, means.begin() + off + nw);
    l.weight_logvar.assign(logvars.begin() + off, logvars.begin() + off + nw);
    l.bias_mean.assign(means.begin() + off + nw, means.begin() + off + nw + shape.out);
    l.bias_logvar.assign(logvars.begin() + off + nw,
                         logvars.begin() + off + nw + shape.out);
    off += nw + shape.out;
    m.layers.push_back(std::move(l));
  }
  return m;
}

}  // namespace ifval
