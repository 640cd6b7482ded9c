#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "darn/data.hpp"
#include "darn/losses.hpp"
#include "darn/network.hpp"

namespace darn {

// Scales each row segment to unit Euclidean norm in place; widths partition
// the columns.  All-zero segments are left untouched; the return value counts
// them as a diagnostic.
std::size_t l2_normalize_segments(Tensor& rows, std::span<const std::size_t> widths);

// Principal axes of the (population) covariance, columns ordered by
// descending explained variance.  Each column's largest-magnitude coordinate
// is made positive so fits are reproducible.
struct PcaModel {
  Tensor mean;       // [D]
  Tensor basis;      // [D,d] with orthonormal columns
  Tensor variances;  // [d], non-increasing

  std::size_t in_dim() const { return basis.dim(0); }
  std::size_t out_dim() const { return basis.dim(1); }
  Tensor project(const Tensor& rows) const;  // [N,D] -> [N,d]
};

// dims must not exceed min(N-1, D).
PcaModel fit_pca(const Tensor& rows, std::size_t dims);

void save_pca(const std::filesystem::path& path, const PcaModel& model);
PcaModel load_pca(const std::filesystem::path& path);

// Feature rows with a row-aligned id list.  On disk: <base>.tnsr holding the
// matrix and <base>.ids with one id per line.
struct FeatureSet {
  std::vector<std::string> ids;
  Tensor rows;  // [N,d]
};

void save_feature_set(const std::filesystem::path& base, const FeatureSet& fs);
FeatureSet load_feature_set(const std::filesystem::path& base);

// Ranking features for a mixed-domain sample list: each sample runs through
// its domain's tower, segments are L2-normalized per layer, and rows are
// optionally PCA-projected.  Order follows the input.
FeatureSet extract_features(const DualNetwork& net, const std::vector<BatchEntry>& samples,
                            const FeatureSpec& spec, const PcaModel* pca = nullptr,
                            std::size_t chunk_rows = 64);

// Sample lists for the two sides of a dataset.  Online ids are the item ids;
// offline ids are "<item_id>#<view>".
std::vector<BatchEntry> online_samples(const Dataset& ds);
std::vector<BatchEntry> offline_samples(const Dataset& ds);
std::string offline_query_item(const std::string& query_id);  // strips "#k"

}  // namespace darn
