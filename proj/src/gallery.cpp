#include "darn/gallery.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include "nlohmann/json.hpp"

namespace darn {

Gallery Gallery::build(const FeatureSet& features, std::map<std::string, std::vector<int>> labels) {
  Gallery g;
  if (features.ids.empty()) {
    check(labels.empty(), ErrorCategory::Build, "labels given for an empty gallery");
    return g;
  }
  check(features.rows.ndim() == 2 && features.rows.dim(0) == features.ids.size(),
        ErrorCategory::Build, "feature rows ", features.rows.shape_str(), " do not line up with ",
        features.ids.size(), " ids");
  std::set<std::string> seen;
  for (const std::string& id : features.ids)
    check(seen.insert(id).second, ErrorCategory::Build, "duplicate gallery id ", id);
  for (const auto& [id, ls] : labels)
    check(seen.count(id) == 1, ErrorCategory::Build, "labels for unknown gallery id ", id);
  g.ids_ = features.ids;
  g.rows_ = features.rows;
  g.labels_ = std::move(labels);
  return g;
}

const std::vector<int>* Gallery::labels_of(const std::string& id) const {
  auto it = labels_.find(id);
  return it == labels_.end() ? nullptr : &it->second;
}

RankedList Gallery::query(const std::string& query_id, std::span<const double> q,
                          std::size_t k) const {
  check(k >= 1, ErrorCategory::Config, "query wants at least k=1, got ", k);
  RankedList out{query_id, {}};
  if (ids_.empty()) return out;
  check(q.size() == dim(), ErrorCategory::Dimension, "query ", query_id, " has dimension ",
        q.size(), ", gallery holds ", dim());

  const std::size_t N = size(), d = dim();
  std::vector<double> d2(N);
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0.0;
    const double* row = rows_.v.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = row[j] - q[j];
      s += diff * diff;
    }
    d2[i] = s;
  }
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (d2[a] != d2[b]) return d2[a] < d2[b];
    return ids_[a] < ids_[b];
  });
  const std::size_t take = std::min(k, N);
  out.entries.reserve(take);
  for (std::size_t r = 0; r < take; ++r)
    out.entries.push_back({ids_[order[r]], std::sqrt(d2[order[r]])});
  return out;
}

std::vector<RankedList> Gallery::batch_query(const FeatureSet& queries, std::size_t k) const {
  check(queries.rows.ndim() == 2 || queries.ids.empty(), ErrorCategory::Dimension,
        "queries must form a matrix");
  std::vector<RankedList> out;
  out.reserve(queries.ids.size());
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < queries.ids.size(); ++i) {
    const std::size_t d = queries.rows.dim(1);
    out.push_back(query(queries.ids[i],
                        std::span<const double>(queries.rows.v.data() + i * d, d), k));
    if ((i + 1) % 1000 == 0 || i + 1 == queries.ids.size()) {
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - start)
                          .count();
      std::clog << "[gallery] " << (i + 1) << " queries in " << ms << " ms\n";
    }
  }
  return out;
}

void save_gallery(const std::filesystem::path& dir, const Gallery& g) {
  check(g.size() > 0, ErrorCategory::Validation, "refusing to persist an empty gallery");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  check(!ec, ErrorCategory::Io, "cannot create ", dir.string(), ": ", ec.message());
  FeatureSet fs{g.ids(), g.rows()};
  save_feature_set(dir / "features", fs);
  if (!g.labels().empty()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [id, ls] : g.labels()) j[id] = ls;
    std::ofstream out(dir / "labels.json", std::ios::binary);
    check(out.good(), ErrorCategory::Io, "cannot write ", (dir / "labels.json").string());
    out << j.dump(2) << "\n";
    check(out.good(), ErrorCategory::Io, "short write to labels.json");
  }
}

Gallery load_gallery(const std::filesystem::path& dir) {
  FeatureSet fs = load_feature_set(dir / "features");
  std::map<std::string, std::vector<int>> labels;
  const std::filesystem::path lp = dir / "labels.json";
  if (std::filesystem::exists(lp)) {
    std::ifstream in(lp, std::ios::binary);
    check(in.good(), ErrorCategory::Io, "cannot open ", lp.string());
    nlohmann::json j;
    try {
      in >> j;
      for (auto it = j.begin(); it != j.end(); ++it)
        labels[it.key()] = it.value().get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCategory::Io, lp.string(), ": ", e.what());
    }
  }
  return Gallery::build(fs, std::move(labels));
}

void write_results_csv(std::ostream& os, std::span<const RankedList> results) {
  os << "query_id,rank,gallery_id,distance\n";
  char buf[64];
  for (const RankedList& rl : results)
    for (std::size_t r = 0; r < rl.entries.size(); ++r) {
      std::snprintf(buf, sizeof buf, ",%zu,", r + 1);
      os << rl.query_id << buf << rl.entries[r].id;
      std::snprintf(buf, sizeof buf, ",%.17g\n", rl.entries[r].distance);
      os << buf;
    }
}

}  // namespace darn
