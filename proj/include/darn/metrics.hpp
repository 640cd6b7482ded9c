#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "darn/gallery.hpp"
#include "nlohmann/json.hpp"

namespace darn {

// Fraction of queries whose first k entries contain any of the query's true
// match ids.
double top_k_accuracy(std::span<const RankedList> results,
                      const std::map<std::string, std::vector<std::string>>& truth,
                      std::size_t k);

// Matched attribute count over the query's non-missing count; the query must
// carry at least one label.
double relevance(const std::vector<int>& query_labels, const std::vector<int>& result_labels);

// Mean over queries of DCG@k normalized by the ideal DCG, where the ideal
// takes the k best relevances over the whole gallery (ties by ascending id).
// Gain (2^rel - 1), discount log2(rank+1); an all-zero ideal scores 1.
double ndcg_at_k(std::span<const RankedList> results,
                 const std::map<std::string, std::vector<int>>& query_labels,
                 const Gallery& gallery, std::size_t k);

struct EvalReport {
  std::map<std::size_t, double> top_k;  // k -> accuracy
  std::map<std::size_t, double> ndcg;   // k -> value
  std::size_t gallery_size = 0;
  std::size_t query_count = 0;
  nlohmann::json config_echo;  // filled by drivers

  nlohmann::json to_json() const;
  std::string top_k_csv() const;  // "k,accuracy" rows
  std::string ndcg_csv() const;   // "k,ndcg" rows
};

// Standard protocol: queries are street views named "<item>#<view>"; the true
// match is that item's own gallery row; NDCG relevance uses the per-query
// label map.
EvalReport evaluate_queries(const Gallery& gallery, const FeatureSet& queries,
                            const std::map<std::string, std::vector<int>>& query_labels,
                            std::span<const std::size_t> k_values);

}  // namespace darn
