#include "darn/tensor.hpp"

#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace darn {

namespace {

std::size_t checked_numel(const std::vector<std::size_t>& extents) {
  check(!extents.empty(), ErrorCategory::Dimension, "tensor needs at least one extent");
  std::size_t n = 1;
  for (std::size_t e : extents) {
    check(e > 0, ErrorCategory::Dimension, "tensor extents must be positive");
    n *= e;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> extents) {
  std::size_t n = checked_numel(extents);
  shape = std::move(extents);
  v.assign(n, 0.0);
}

Tensor Tensor::full(std::vector<std::size_t> extents, double value) {
  Tensor t(std::move(extents));
  std::fill(t.v.begin(), t.v.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t({1});
  t.v[0] = value;
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> extents, std::vector<double> values) {
  std::size_t n = checked_numel(extents);
  check(n == values.size(), ErrorCategory::Dimension, "value count ", values.size(),
        " does not match shape product ", n);
  Tensor t;
  t.shape = std::move(extents);
  t.v = std::move(values);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// TNSR io. Fixed little-endian layout independent of host byte order.

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  check(bool(is), ErrorCategory::Io, "truncated TNSR stream");
  std::uint32_t x = 0;
  for (int i = 3; i >= 0; --i) x = (x << 8) | b[i];
  return x;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  check(bool(is), ErrorCategory::Io, "truncated TNSR stream");
  std::uint64_t x = 0;
  for (int i = 7; i >= 0; --i) x = (x << 8) | b[i];
  return x;
}

bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char first;
  std::memcpy(&first, &probe, 1);
  return first == 1;
}

}  // namespace

void write_tnsr(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  check(t.ndim() <= 255, ErrorCategory::Dimension, "TNSR supports at most 255 dims");
  unsigned char nd = static_cast<unsigned char>(t.ndim());
  os.write(reinterpret_cast<const char*>(&nd), 1);
  for (std::size_t e : t.shape) put_u64(os, e);
  if (host_is_little_endian()) {
    os.write(reinterpret_cast<const char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * sizeof(double)));
  } else {
    for (double d : t.v) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      put_u64(os, bits);
    }
  }
  check(bool(os), ErrorCategory::Io, "TNSR write failed");
}

Tensor read_tnsr(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  check(bool(is) && std::memcmp(magic, kMagic, 4) == 0, ErrorCategory::Io,
        "not a TNSR stream (bad magic)");
  std::uint32_t version = get_u32(is);
  check(version == kVersion, ErrorCategory::Io, "unsupported TNSR version ", version);
  unsigned char nd = 0;
  is.read(reinterpret_cast<char*>(&nd), 1);
  check(bool(is), ErrorCategory::Io, "truncated TNSR stream");
  std::vector<std::size_t> extents(nd);
  for (auto& e : extents) e = static_cast<std::size_t>(get_u64(is));
  Tensor t(std::move(extents));
  if (host_is_little_endian()) {
    is.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    check(bool(is), ErrorCategory::Io, "truncated TNSR payload");
  } else {
    for (double& d : t.v) {
      std::uint64_t bits = get_u64(is);
      std::memcpy(&d, &bits, 8);
    }
  }
  return t;
}

void save_tnsr(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  check(bool(os), ErrorCategory::Io, "cannot open for writing: ", path.string());
  write_tnsr(os, t);
  check(bool(os), ErrorCategory::Io, "write failed: ", path.string());
}

Tensor load_tnsr(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), ErrorCategory::Io, "cannot open: ", path.string());
  return read_tnsr(is);
}

// ---------------------------------------------------------------------------

const Tensor* NamedTensors::find(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

void write_named_tensors(std::ostream& os, const NamedTensors& tensors) {
  put_u32(os, static_cast<std::uint32_t>(tensors.items.size()));
  for (const auto& [name, t] : tensors.items) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tnsr(os, t);
  }
  check(bool(os), ErrorCategory::Io, "named tensor write failed");
}

NamedTensors read_named_tensors(std::istream& is) {
  NamedTensors out;
  std::uint32_t count = get_u32(is);
  out.items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = get_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    check(bool(is), ErrorCategory::Io, "truncated named tensor stream");
    out.items.emplace_back(std::move(name), read_tnsr(is));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> split_cols(const Tensor& m, std::span<const std::size_t> widths) {
  check(m.ndim() == 1 || m.ndim() == 2, ErrorCategory::Dimension,
        "split_cols expects a vector or matrix, got ", m.shape_str());
  std::size_t rows = m.ndim() == 2 ? m.dim(0) : 1;
  std::size_t cols = m.ndim() == 2 ? m.dim(1) : m.dim(0);
  std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  check(total == cols, ErrorCategory::Dimension, "segment widths sum to ", total,
        " but matrix has ", cols, " columns");

  std::vector<Tensor> out;
  out.reserve(widths.size());
  std::size_t offset = 0;
  for (std::size_t w : widths) {
    check(w > 0, ErrorCategory::Dimension, "zero-width segment");
    Tensor seg = m.ndim() == 2 ? Tensor({rows, w}) : Tensor({w});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) seg.v[r * w + c] = m.v[r * cols + offset + c];
    out.push_back(std::move(seg));
    offset += w;
  }
  return out;
}

Tensor stack(std::span<const Tensor> parts) {
  check(!parts.empty(), ErrorCategory::Dimension, "stack of zero tensors");
  for (const Tensor& p : parts)
    check_same_shape(parts[0], p, "stack");
  std::vector<std::size_t> extents;
  extents.push_back(parts.size());
  extents.insert(extents.end(), parts[0].shape.begin(), parts[0].shape.end());
  Tensor out(std::move(extents));
  std::size_t stride = parts[0].numel();
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i].v.begin(), parts[i].v.end(), out.v.begin() + i * stride);
  return out;
}

}  // namespace darn
