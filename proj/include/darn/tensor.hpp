#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "darn/error.hpp"

namespace darn {

// Dense row-major double tensor. Scalars are shape {1}.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> extents);

  static Tensor zeros(std::vector<std::size_t> extents) { return Tensor(std::move(extents)); }
  static Tensor full(std::vector<std::size_t> extents, double value);
  static Tensor scalar(double value);
  static Tensor from(std::vector<std::size_t> extents, std::vector<double> values);

  std::size_t numel() const { return v.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  bool is_scalar() const { return numel() == 1; }
  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }

  // Row-major offset helpers for the common layouts.
  std::size_t at2(std::size_t i, std::size_t j) const { return i * shape[1] + j; }
  std::size_t at4(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape[1] + c) * shape[2] + y) * shape[3] + x;
  }

  std::string shape_str() const;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  check(a.same_shape(b), ErrorCategory::Dimension, what, ": shape ", a.shape_str(),
        " vs ", b.shape_str());
}

// ---------------------------------------------------------------------------
// TNSR serialization: magic "TNSR", u32 version=1, u8 ndim, ndim x u64
// extents, row-major IEEE-754 little-endian f64 payload.

void write_tnsr(std::ostream& os, const Tensor& t);
Tensor read_tnsr(std::istream& is);
void save_tnsr(const std::filesystem::path& path, const Tensor& t);
Tensor load_tnsr(const std::filesystem::path& path);

// Ordered list of named tensors, the building block of checkpoint and
// PCA-model files. Layout: u32 count, then per entry u32 name length,
// name bytes, TNSR blob.
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(std::string name, Tensor t) { items.emplace_back(std::move(name), std::move(t)); }
  const Tensor* find(const std::string& name) const;
  std::size_t size() const { return items.size(); }
};

void write_named_tensors(std::ostream& os, const NamedTensors& tensors);
NamedTensors read_named_tensors(std::istream& is);

// ---------------------------------------------------------------------------
// Small matrix helpers used by the feature pipeline.

// Splits each row of a [N, sum(widths)] matrix (or a flat vector) into
// column segments. Inverse of horizontal concatenation.
std::vector<Tensor> split_cols(const Tensor& m, std::span<const std::size_t> widths);

// Stacks equal-shape tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

}  // namespace darn
