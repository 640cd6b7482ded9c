#include "darn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "darn/error.hpp"

namespace darn {

double top_k_accuracy(std::span<const RankedList> results,
                      const std::map<std::string, std::vector<std::string>>& truth,
                      std::size_t k) {
  check(k >= 1, ErrorCategory::Config, "top_k_accuracy: k must be >= 1");
  check(!results.empty(), ErrorCategory::Contract, "top_k_accuracy: no queries");
  std::size_t hits = 0;
  for (const RankedList& rl : results) {
    auto it = truth.find(rl.query_id);
    if (it == truth.end())
      fail(ErrorCategory::Contract, "top_k_accuracy: query '", rl.query_id, "' missing from truth");
    const std::vector<std::string>& matches = it->second;
    std::size_t upto = std::min(k, rl.entries.size());
    for (std::size_t r = 0; r < upto; ++r) {
      if (std::find(matches.begin(), matches.end(), rl.entries[r].id) != matches.end()) {
        ++hits;
        break;
      }
    }
  }
  return double(hits) / double(results.size());
}

double relevance(const std::vector<int>& query_labels, const std::vector<int>& result_labels) {
  check(query_labels.size() == result_labels.size(), ErrorCategory::Dimension,
        "relevance: label vectors differ in length (", query_labels.size(), " vs ",
        result_labels.size(), ")");
  std::size_t known = 0, matched = 0;
  for (std::size_t c = 0; c < query_labels.size(); ++c) {
    if (query_labels[c] == kMissingLabel) continue;
    ++known;
    if (result_labels[c] == query_labels[c]) ++matched;
  }
  check(known >= 1, ErrorCategory::Contract, "relevance: query has no non-missing attribute");
  return double(matched) / double(known);
}

namespace {

// Shared by the realized and the ideal side so a perfectly ordered ranking
// accumulates the exact same sum as its normalizer.
double dcg(std::span<const double> rels) {
  double sum = 0.0;
  for (std::size_t j = 0; j < rels.size(); ++j)
    sum += (std::exp2(rels[j]) - 1.0) / std::log2(double(j + 2));
  return sum;
}

const std::vector<int>& gallery_labels_or_fail(const Gallery& g, const std::string& id) {
  const std::vector<int>* labels = g.labels_of(id);
  if (!labels) fail(ErrorCategory::Contract, "ndcg: gallery id '", id, "' has no attribute labels");
  return *labels;
}

}  // namespace

double ndcg_at_k(std::span<const RankedList> results,
                 const std::map<std::string, std::vector<int>>& query_labels,
                 const Gallery& gallery, std::size_t k) {
  check(k >= 1, ErrorCategory::Config, "ndcg: k must be >= 1");
  check(!results.empty(), ErrorCategory::Contract, "ndcg: no queries");
  double total = 0.0;
  for (const RankedList& rl : results) {
    auto it = query_labels.find(rl.query_id);
    if (it == query_labels.end())
      fail(ErrorCategory::Contract, "ndcg: query '", rl.query_id, "' missing from label table");
    const std::vector<int>& ql = it->second;

    std::vector<double> realized;
    realized.reserve(std::min(k, rl.entries.size()));
    for (std::size_t r = 0; r < rl.entries.size() && r < k; ++r)
      realized.push_back(relevance(ql, gallery_labels_or_fail(gallery, rl.entries[r].id)));

    // Ideal: the k best relevances over the whole gallery, ties by id.
    std::vector<std::pair<double, const std::string*>> pool;
    pool.reserve(gallery.size());
    for (const std::string& id : gallery.ids())
      pool.emplace_back(relevance(ql, gallery_labels_or_fail(gallery, id)), &id);
    std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return *a.second < *b.second;
    });
    std::vector<double> ideal;
    ideal.reserve(std::min(k, pool.size()));
    for (std::size_t r = 0; r < pool.size() && r < k; ++r) ideal.push_back(pool[r].first);

    double z = dcg(ideal);
    total += z == 0.0 ? 1.0 : dcg(realized) / z;
  }
  return total / double(results.size());
}

namespace {

std::string curve_csv(const char* value_name, const std::map<std::size_t, double>& curve) {
  std::ostringstream os;
  os << "k," << value_name << "\n";
  char buf[64];
  for (const auto& [k, v] : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", k, v);
    os << buf;
  }
  return os.str();
}

nlohmann::json curve_json(const std::map<std::size_t, double>& curve) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [k, v] : curve) arr.push_back({k, v});
  return arr;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["gallery_size"] = gallery_size;
  j["query_count"] = query_count;
  j["top_k"] = curve_json(top_k);
  j["ndcg"] = curve_json(ndcg);
  if (!config_echo.is_null()) j["config"] = config_echo;
  return j;
}

std::string EvalReport::top_k_csv() const { return curve_csv("accuracy", top_k); }
std::string EvalReport::ndcg_csv() const { return curve_csv("ndcg", ndcg); }

EvalReport evaluate_queries(const Gallery& gallery, const FeatureSet& queries,
                            const std::map<std::string, std::vector<int>>& query_labels,
                            std::span<const std::size_t> k_values) {
  check(!k_values.empty(), ErrorCategory::Config, "evaluate_queries: no k values");
  std::size_t kmax = *std::max_element(k_values.begin(), k_values.end());
  std::vector<RankedList> results = gallery.batch_query(queries, kmax);

  std::map<std::string, std::vector<std::string>> truth;
  for (const std::string& qid : queries.ids)
    truth[qid] = {offline_query_item(qid)};

  EvalReport report;
  report.gallery_size = gallery.size();
  report.query_count = results.size();
  for (std::size_t k : k_values) {
    report.top_k[k] = top_k_accuracy(results, truth, k);
    report.ndcg[k] = ndcg_at_k(results, query_labels, gallery, k);
  }
  return report;
}

}  // namespace darn
