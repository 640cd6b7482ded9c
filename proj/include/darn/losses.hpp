#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "darn/network.hpp"

namespace darn {

// Which per-image descriptors feed the ranking distance. The first fully
// connected layer is always included; the last two conv maps (pooled to 3x3)
// are optional refinements.
struct FeatureSpec {
  bool fc1 = true;
  bool c4 = true;
  bool c5 = true;

  void validate() const;
  std::string describe() const;                    // e.g. "fc1+c4+c5"
  static FeatureSpec parse(std::string_view s);    // inverse of describe()

  // Column widths of the concatenated feature, in layout order.
  std::vector<std::size_t> segment_widths(const SubNetworkConfig& cfg) const;
};

struct RankingConfig {
  double margin = 0.3;
  FeatureSpec features;
  Distance distance = Distance::Euclidean;
  // Measure triplet distances on per-segment unit-normalized features, the
  // same convention retrieval uses. Keeps the margin meaningful on a fixed
  // scale; raw-feature distances can collapse to zero, freezing the term.
  bool normalize = true;
  double attr_weight = 1.0;
  double rank_weight = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static RankingConfig from_json(const nlohmann::json& j);
};

// One training triplet, as positions into the forwarded batch. The anchor
// must be an offline row; positive and negative must be online rows.
struct TripletIndices {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

// Layout: [fc1 | adaptive-3x3-pooled c4, flattened | pooled c5, flattened],
// restricted to the segments the spec enables.
Var ranking_feature(Graph& g, const SubForward& fwd, const FeatureSpec& spec);

// Same layout with each segment scaled to unit row norm before
// concatenation; what the triplet term trains on when normalization is on.
Var unit_ranking_feature(Graph& g, const SubForward& fwd, const FeatureSpec& spec);

struct LossBreakdown {
  Var total;
  double attribute = 0.0;  // value of the attribute term (unweighted)
  double ranking = 0.0;    // value of the ranking term (unweighted)
};

// attribute term: mean of per-branch cross entropy over the (part, category)
// branches that saw at least one label, so a fully-masked category drops out
// without rescaling the others and the result matches a network built
// without that branch.
// ranking term: hinge over the given triplets on ranking features.
LossBreakdown total_loss(Graph& g, const RoutedBatch& routed,
                         const std::vector<BatchEntry>& batch,
                         const std::vector<TripletIndices>& triplets, const RankingConfig& cfg,
                         const AttributeSchema& schema);

}  // namespace darn
