#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "darn/schema.hpp"
#include "darn/tensor.hpp"

namespace darn {

// One catalog item: the clean shop-side rendering ("online"), the messy
// street-side views ("offline"), and attribute labels.
struct TrainExample {
  std::string item_id;
  Tensor online;                 // [C,H,W] in [0,1]
  std::vector<Tensor> offlines;  // zero or more [C,H,W]
  std::vector<int> labels;       // aligned with the schema, kMissingLabel ok
};

struct Dataset {
  AttributeSchema schema;
  std::vector<TrainExample> items;
};

// Binary PPM (P6, maxval 255); tensors are [3,H,W] planar in [0,1].  Values
// are clamped and quantized to the 8-bit grid on write.
Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

// On-disk layout: <dir>/manifest.json plus <dir>/images/* with a lossless
// TNSR file (authoritative) and a PPM copy for inspection per image.  Saving
// the same dataset twice produces byte-identical files.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

// Deterministic item-level split; order within each side follows the input.
// train_fraction of 1.0 leaves the test side empty.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double train_fraction,
                                             std::uint64_t seed);

}  // namespace darn
