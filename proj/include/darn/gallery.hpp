#pragma once

#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "darn/features.hpp"

namespace darn {

struct RankedEntry {
  std::string id;
  double distance = 0.0;
};

struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;  // distances non-decreasing, ties by id
};

// Exact brute-force Euclidean gallery.  Distances are compared squared and
// square-rooted only at the boundary; ties order by ascending gallery id so
// rankings are a deterministic total order.
class Gallery {
 public:
  Gallery() = default;  // empty gallery: every query returns an empty list

  static Gallery build(const FeatureSet& features,
                       std::map<std::string, std::vector<int>> labels = {});

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return ids_.empty() ? 0 : rows_.dim(1); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Tensor& rows() const { return rows_; }
  // label vector for an id, or null when none was provided
  const std::vector<int>* labels_of(const std::string& id) const;
  const std::map<std::string, std::vector<int>>& labels() const { return labels_; }

  RankedList query(const std::string& query_id, std::span<const double> q, std::size_t k) const;
  std::vector<RankedList> batch_query(const FeatureSet& queries, std::size_t k) const;

 private:
  std::vector<std::string> ids_;
  Tensor rows_;  // [N,d]; default-constructed when empty
  std::map<std::string, std::vector<int>> labels_;
};

// On-disk: <dir>/features.tnsr + features.ids (+ labels.json when labels are
// attached).
void save_gallery(const std::filesystem::path& dir, const Gallery& g);
Gallery load_gallery(const std::filesystem::path& dir);

// CSV rows "query_id,rank,gallery_id,distance", rank starting at 1.
void write_results_csv(std::ostream& os, std::span<const RankedList> results);

}  // namespace darn
