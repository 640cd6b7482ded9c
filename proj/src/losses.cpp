#include "darn/losses.hpp"

#include <sstream>

namespace darn {

void FeatureSpec::validate() const {
  check(fc1, ErrorCategory::Config, "ranking features always include fc1");
}

std::string FeatureSpec::describe() const {
  std::string s = "fc1";
  if (c4) s += "+c4";
  if (c5) s += "+c5";
  return s;
}

FeatureSpec FeatureSpec::parse(std::string_view s) {
  FeatureSpec spec;
  spec.fc1 = false;
  spec.c4 = false;
  spec.c5 = false;
  std::string token;
  std::istringstream is{std::string(s)};
  while (std::getline(is, token, '+')) {
    if (token == "fc1")
      spec.fc1 = true;
    else if (token == "c4")
      spec.c4 = true;
    else if (token == "c5")
      spec.c5 = true;
    else
      fail(ErrorCategory::Config, "unknown ranking feature '", token, "' in '", std::string(s),
           "'");
  }
  spec.validate();
  return spec;
}

std::vector<std::size_t> FeatureSpec::segment_widths(const SubNetworkConfig& cfg) const {
  validate();
  std::vector<std::size_t> widths{cfg.fc1};
  const std::size_t n = cfg.stages.size();
  if (c4) widths.push_back(cfg.stages[n - 2].filters * 9);
  if (c5) widths.push_back(cfg.stages[n - 1].filters * 9);
  return widths;
}

nlohmann::json RankingConfig::to_json() const {
  return {{"margin", margin},
          {"features", features.describe()},
          {"distance", distance == Distance::Euclidean ? "euclidean" : "squared"},
          {"normalize", normalize},
          {"attr_weight", attr_weight},
          {"rank_weight", rank_weight}};
}

RankingConfig RankingConfig::from_json(const nlohmann::json& j) {
  RankingConfig cfg;
  cfg.margin = j.value("margin", 0.3);
  if (j.contains("features")) cfg.features = FeatureSpec::parse(j.at("features").get<std::string>());
  if (j.contains("distance")) {
    const std::string d = j.at("distance").get<std::string>();
    if (d == "euclidean")
      cfg.distance = Distance::Euclidean;
    else if (d == "squared")
      cfg.distance = Distance::SquaredEuclidean;
    else
      fail(ErrorCategory::Config, "unknown distance '", d, "'");
  }
  cfg.normalize = j.value("normalize", true);
  cfg.attr_weight = j.value("attr_weight", 1.0);
  cfg.rank_weight = j.value("rank_weight", 1.0);
  cfg.validate();
  return cfg;
}

void RankingConfig::validate() const {
  features.validate();
  check(margin > 0.0, ErrorCategory::Config, "margin must be positive");
  check(attr_weight >= 0.0 && rank_weight >= 0.0, ErrorCategory::Config,
        "loss weights must be non-negative");
}

namespace {

std::vector<Var> feature_segments(Graph& g, const SubForward& fwd, const FeatureSpec& spec) {
  spec.validate();
  std::vector<Var> parts{fwd.fc1};
  if (spec.c4) parts.push_back(g.flatten(g.adaptive_maxpool_3x3(fwd.c4)));
  if (spec.c5) parts.push_back(g.flatten(g.adaptive_maxpool_3x3(fwd.c5)));
  return parts;
}

}  // namespace

Var ranking_feature(Graph& g, const SubForward& fwd, const FeatureSpec& spec) {
  return g.concat(feature_segments(g, fwd, spec));
}

Var unit_ranking_feature(Graph& g, const SubForward& fwd, const FeatureSpec& spec) {
  std::vector<Var> parts = feature_segments(g, fwd, spec);
  for (Var& p : parts) p = g.l2_normalize_rows(p);
  return g.concat(parts);
}

LossBreakdown total_loss(Graph& g, const RoutedBatch& routed,
                         const std::vector<BatchEntry>& batch,
                         const std::vector<TripletIndices>& triplets, const RankingConfig& cfg,
                         const AttributeSchema& schema) {
  check(!routed.parts.empty(), ErrorCategory::Contract, "loss over an empty forward");
  for (const BatchEntry& e : batch)
    check(e.labels.size() == schema.size(), ErrorCategory::Dimension, "batch entry ", e.id,
          " has ", e.labels.size(), " labels for ", schema.size(), " categories");

  // Attribute branches, in fixed part-then-category order.  The mean runs
  // over branches that saw at least one label, so a fully missing category
  // leaves the remaining gradients bitwise identical to a network that never
  // had the branch.
  Var attr_sum;
  std::size_t live_branches = 0;
  for (const RoutedPart& part : routed.parts) {
    for (std::size_t ci = 0; ci < schema.size(); ++ci) {
      std::vector<int> labels;
      labels.reserve(part.positions.size());
      for (std::size_t pos : part.positions) labels.push_back(batch[pos].labels[ci]);
      for (int l : labels)
        if (l != kMissingLabel) {
          ++live_branches;
          break;
        }
      Var ce = g.softmax_cross_entropy(part.out.branch_logits[ci], labels);
      attr_sum = attr_sum.defined() ? g.add(attr_sum, ce) : ce;
    }
  }
  Var attr = live_branches ? g.scale(attr_sum, 1.0 / double(live_branches)) : attr_sum;

  // Ranking triplets.
  Var rank;
  if (triplets.empty()) {
    rank = g.leaf(Tensor::scalar(0.0));
  } else {
    // Feature matrices are built once per involved part.
    std::vector<Var> features(routed.parts.size());
    auto feature_of = [&](std::size_t part_index) -> Var {
      if (!features[part_index].defined())
        features[part_index] =
            cfg.normalize ? unit_ranking_feature(g, routed.parts[part_index].out, cfg.features)
                          : ranking_feature(g, routed.parts[part_index].out, cfg.features);
      return features[part_index];
    };
    auto resolve = [&](std::size_t pos, Domain want, const char* role) {
      check(pos < batch.size(), ErrorCategory::Contract, "triplet ", role, " position ", pos,
            " out of range");
      const auto [part_index, row] = routed.locate[pos];
      check(routed.parts[part_index].domain == want, ErrorCategory::Contract, "triplet ", role,
            " must be an ", domain_name(want), " row, got ",
            domain_name(routed.parts[part_index].domain), " (batch entry ", batch[pos].id, ")");
      return std::pair{part_index, row};
    };

    std::vector<std::size_t> a_rows, p_rows, n_rows;
    std::size_t a_part = 0, on_part = 0;
    for (const TripletIndices& t : triplets) {
      auto [ap, ar] = resolve(t.anchor, Domain::Offline, "anchor");
      auto [pp, pr] = resolve(t.positive, Domain::Online, "positive");
      auto [np, nr] = resolve(t.negative, Domain::Online, "negative");
      a_part = ap;
      on_part = pp;
      check(pp == np, ErrorCategory::Contract, "positive and negative rows come from one part");
      a_rows.push_back(ar);
      p_rows.push_back(pr);
      n_rows.push_back(nr);
    }
    Var anchors = g.gather_rows(feature_of(a_part), a_rows);
    Var positives = g.gather_rows(feature_of(on_part), p_rows);
    Var negatives = g.gather_rows(feature_of(on_part), n_rows);
    rank = g.triplet_ranking(anchors, positives, negatives, cfg.margin, cfg.distance);
  }

  LossBreakdown out;
  out.attribute = attr.value().v[0];
  out.ranking = rank.value().v[0];
  out.total = g.add(g.scale(attr, cfg.attr_weight), g.scale(rank, cfg.rank_weight));
  return out;
}

}  // namespace darn
