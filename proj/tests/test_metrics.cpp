#include "darn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "darn/rng.hpp"
#include "doctest.h"

using namespace darn;

namespace {

// Independent straight-line references computed with a deliberately different
// numeric path (pow / natural-log ratio instead of exp2 / log2).
double ref_relevance(const std::vector<int>& q, const std::vector<int>& r) {
  int known = 0, matched = 0;
  for (std::size_t c = 0; c < q.size(); ++c) known += q[c] != kMissingLabel;
  for (std::size_t c = 0; c < q.size(); ++c)
    matched += q[c] != kMissingLabel && q[c] == r[c];
  return double(matched) / double(known);
}

double ref_top_k(const std::vector<RankedList>& results,
                 const std::map<std::string, std::vector<std::string>>& truth, std::size_t k) {
  int hit = 0;
  for (const RankedList& rl : results) {
    bool found = false;
    for (std::size_t r = 0; r < rl.entries.size() && r < k; ++r)
      for (const std::string& m : truth.at(rl.query_id))
        if (rl.entries[r].id == m) found = true;
    hit += found;
  }
  return double(hit) / double(results.size());
}

double ref_ndcg_one(const std::vector<double>& realized, std::vector<double> all_rels,
                    std::size_t k) {
  double dcg = 0.0;
  for (std::size_t j = 0; j < realized.size() && j < k; ++j)
    dcg += (std::pow(2.0, realized[j]) - 1.0) * std::log(2.0) / std::log(double(j + 2));
  std::sort(all_rels.begin(), all_rels.end(), std::greater<double>());
  double idcg = 0.0;
  for (std::size_t j = 0; j < all_rels.size() && j < k; ++j)
    idcg += (std::pow(2.0, all_rels[j]) - 1.0) * std::log(2.0) / std::log(double(j + 2));
  return idcg == 0.0 ? 1.0 : dcg / idcg;
}

RankedList make_list(const std::string& qid, const std::vector<std::string>& ids) {
  RankedList rl;
  rl.query_id = qid;
  for (std::size_t r = 0; r < ids.size(); ++r) rl.entries.push_back({ids[r], double(r)});
  return rl;
}

Gallery labeled_gallery(const std::vector<std::string>& ids,
                        const std::vector<std::vector<int>>& labels) {
  FeatureSet fs;
  fs.ids = ids;
  fs.rows = Tensor({ids.size(), 1});
  std::map<std::string, std::vector<int>> table;
  for (std::size_t i = 0; i < ids.size(); ++i) table[ids[i]] = labels[i];
  return Gallery::build(fs, table);
}

}  // namespace

TEST_CASE("top-k accuracy counts queries with a match in the prefix") {
  std::vector<RankedList> results = {make_list("q1", {"a", "b", "c"}),
                                     make_list("q2", {"b", "c", "a"})};
  std::map<std::string, std::vector<std::string>> truth = {{"q1", {"a"}}, {"q2", {"a"}}};

  CHECK(top_k_accuracy(results, truth, 1) == 0.5);  // q1 hits at rank 1
  CHECK(top_k_accuracy(results, truth, 2) == 0.5);
  CHECK(top_k_accuracy(results, truth, 3) == 1.0);  // q2's match at rank 3

  // no match within k for either query
  std::map<std::string, std::vector<std::string>> none = {{"q1", {"zz"}}, {"q2", {"zz"}}};
  CHECK(top_k_accuracy(results, none, 3) == 0.0);

  // several true matches: any one of them counts
  std::map<std::string, std::vector<std::string>> multi = {{"q1", {"zz", "c"}}, {"q2", {"b"}}};
  CHECK(top_k_accuracy(results, multi, 1) == 0.5);
  CHECK(top_k_accuracy(results, multi, 3) == 1.0);

  // non-decreasing in k
  for (std::size_t k = 1; k < 3; ++k)
    CHECK(top_k_accuracy(results, truth, k) <= top_k_accuracy(results, truth, k + 1));

  std::map<std::string, std::vector<std::string>> missing = {{"q1", {"a"}}};
  CHECK_THROWS_AS(top_k_accuracy(results, missing, 2), Error);
  CHECK_THROWS_AS(top_k_accuracy(results, truth, 0), Error);
  CHECK_THROWS_AS(top_k_accuracy({}, truth, 2), Error);
}

TEST_CASE("random rankings hit at roughly k over n") {
  const std::size_t n = 40, trials = 2000, k = 7;
  std::vector<std::string> ids;
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "g%03zu", i);
    ids.push_back(buf);
  }
  Rng rng(411);
  std::vector<RankedList> results;
  std::map<std::string, std::vector<std::string>> truth;
  for (std::size_t t = 0; t < trials; ++t) {
    std::snprintf(buf, sizeof buf, "q%04zu", t);
    std::vector<std::string> order = ids;
    rng.shuffle(order);
    results.push_back(make_list(buf, order));
    truth[buf] = {ids[rng.below(n)]};
  }
  double p = double(k) / double(n);
  double sigma = std::sqrt(p * (1.0 - p) / double(trials));
  double acc = top_k_accuracy(results, truth, k);
  CHECK(std::abs(acc - p) < 3.0 * sigma);

  // monotone over the full range of k on the same instance
  double prev = 0.0;
  for (std::size_t kk = 1; kk <= n; ++kk) {
    double cur = top_k_accuracy(results, truth, kk);
    CHECK(cur >= prev);
    prev = cur;
  }
  CHECK(prev == 1.0);  // k = n always contains the match
}

TEST_CASE("relevance is matched over query-known categories") {
  // two categories; the result matches only the first
  CHECK(relevance({2, 1}, {2, 0}) == 0.5);
  CHECK(relevance({2, 1}, {2, 1}) == 1.0);
  CHECK(relevance({2, 1}, {0, 0}) == 0.0);
  // an unlabeled result never matches
  CHECK(relevance({2, 1}, {kMissingLabel, kMissingLabel}) == 0.0);
  // query-missing categories are excluded from the denominator
  CHECK(relevance({2, kMissingLabel}, {2, 5}) == 1.0);
  CHECK(relevance({2, kMissingLabel, 4}, {2, 0, 0}) == 0.5);
  // a fully unlabeled query has no denominator
  CHECK_THROWS_AS(relevance({kMissingLabel, kMissingLabel}, {0, 0}), Error);
  CHECK_THROWS_AS(relevance({1, 2}, {1, 2, 3}), Error);
}

TEST_CASE("ndcg matches the straight-line oracle on the worked pair") {
  // realized relevances (0.5, 1.0); the ideal order is (1.0, 0.5)
  Gallery g = labeled_gallery({"A", "B"}, {{0, 1}, {0, 0}});
  std::map<std::string, std::vector<int>> ql = {{"q", {0, 0}}};
  std::vector<RankedList> results = {make_list("q", {"A", "B"})};

  double got = ndcg_at_k(results, ql, g, 2);
  double oracle = ref_ndcg_one({0.5, 1.0}, {1.0, 0.5}, 2);
  CHECK(std::abs(got - oracle) < 1e-12);
  CHECK(got == doctest::Approx(0.828598).epsilon(1e-6));

  // the ideal order itself scores exactly one
  std::vector<RankedList> best = {make_list("q", {"B", "A"})};
  CHECK(ndcg_at_k(best, ql, g, 2) == 1.0);
}

TEST_CASE("descending-relevance rankings score exactly one") {
  // four distinct relevance levels under a three-category query
  Gallery g = labeled_gallery({"r3", "r2", "r1", "r0"},
                              {{0, 0, 0}, {0, 0, 9}, {0, 9, 9}, {9, 9, 9}});
  std::map<std::string, std::vector<int>> ql = {{"q", {0, 0, 0}}};
  std::vector<RankedList> sorted = {make_list("q", {"r3", "r2", "r1", "r0"})};
  for (std::size_t k = 1; k <= 4; ++k) CHECK(ndcg_at_k(sorted, ql, g, k) == 1.0);

  // swapping adjacent entries where the upper is strictly less relevant
  // strictly lowers the score (exchange property, read in reverse)
  std::vector<RankedList> swapped = {make_list("q", {"r2", "r3", "r1", "r0"})};
  double good = ndcg_at_k(sorted, ql, g, 4);
  double bad = ndcg_at_k(swapped, ql, g, 4);
  CHECK(bad < good);

  std::vector<RankedList> swapped_low = {make_list("q", {"r3", "r2", "r0", "r1"})};
  CHECK(ndcg_at_k(swapped_low, ql, g, 4) < good);
  // ...and both partial rankings stay within [0,1]
  CHECK(bad > 0.0);
}

TEST_CASE("an all-zero ideal scores one by convention") {
  Gallery g = labeled_gallery({"a", "b"}, {{5}, {6}});
  std::map<std::string, std::vector<int>> ql = {{"q", {0}}};  // matches nothing
  std::vector<RankedList> results = {make_list("q", {"a", "b"})};
  CHECK(ndcg_at_k(results, ql, g, 2) == 1.0);
}

TEST_CASE("ndcg contract errors") {
  Gallery g = labeled_gallery({"a"}, {{0}});
  std::vector<RankedList> results = {make_list("q", {"a"})};
  std::map<std::string, std::vector<int>> ql = {{"q", {0}}};

  CHECK_THROWS_AS(ndcg_at_k(results, {}, g, 1), Error);         // query unlabeled
  CHECK_THROWS_AS(ndcg_at_k(results, ql, g, 0), Error);         // k = 0
  CHECK_THROWS_AS(ndcg_at_k({}, ql, g, 1), Error);              // no queries
  std::map<std::string, std::vector<int>> all_missing = {{"q", {kMissingLabel}}};
  CHECK_THROWS_AS(ndcg_at_k(results, all_missing, g, 1), Error);

  // gallery built without labels cannot support ndcg
  FeatureSet fs;
  fs.ids = {"a"};
  fs.rows = Tensor({1, 1});
  Gallery bare = Gallery::build(fs);
  CHECK_THROWS_AS(ndcg_at_k(results, ql, bare, 1), Error);
}

TEST_CASE("metrics agree with independent references on random instances") {
  Rng rng(20260823);
  for (int inst = 0; inst < 100; ++inst) {
    std::size_t n = 2 + rng.below(11);       // gallery size
    std::size_t cats = 1 + rng.below(3);     // categories
    std::vector<std::size_t> classes(cats);
    for (auto& c : classes) c = 2 + rng.below(3);

    std::vector<std::string> ids;
    std::vector<std::vector<int>> labels;
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof buf, "g%02zu", i);
      ids.push_back(buf);
      std::vector<int> row(cats);
      for (std::size_t c = 0; c < cats; ++c)
        row[c] = rng.uniform() < 0.2 ? kMissingLabel : int(rng.below(classes[c]));
      labels.push_back(row);
    }
    Gallery g = labeled_gallery(ids, labels);

    std::size_t m = 1 + rng.below(5);  // queries
    std::vector<RankedList> results;
    std::map<std::string, std::vector<int>> ql;
    std::map<std::string, std::vector<std::string>> truth;
    for (std::size_t q = 0; q < m; ++q) {
      std::snprintf(buf, sizeof buf, "q%02zu", q);
      std::vector<std::string> order = ids;
      rng.shuffle(order);
      results.push_back(make_list(buf, order));
      std::vector<int> row(cats, kMissingLabel);
      row[rng.below(cats)] = int(rng.below(classes[0 % cats]));
      for (std::size_t c = 0; c < cats; ++c)
        if (rng.uniform() < 0.5) row[c] = int(rng.below(classes[c]));
      ql[buf] = row;
      truth[buf] = {ids[rng.below(n)]};
      if (rng.uniform() < 0.3) truth[buf].push_back(ids[rng.below(n)]);
    }
    std::size_t k = 1 + rng.below(n);

    CHECK(std::abs(top_k_accuracy(results, truth, k) - ref_top_k(results, truth, k)) < 1e-12);

    double ref_sum = 0.0;
    for (const RankedList& rl : results) {
      std::vector<double> realized;
      for (std::size_t r = 0; r < rl.entries.size() && r < k; ++r) {
        std::size_t gi = std::find(ids.begin(), ids.end(), rl.entries[r].id) - ids.begin();
        realized.push_back(ref_relevance(ql[rl.query_id], labels[gi]));
      }
      std::vector<double> pool;
      for (std::size_t i = 0; i < n; ++i)
        pool.push_back(ref_relevance(ql[rl.query_id], labels[i]));
      ref_sum += ref_ndcg_one(realized, pool, k);
    }
    double got = ndcg_at_k(results, ql, g, k);
    CHECK(std::abs(got - ref_sum / double(m)) < 1e-12);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("ndcg is invariant to query order and id relabeling") {
  Gallery g = labeled_gallery({"a", "b", "c"}, {{0, 1}, {1, 1}, {0, 0}});
  std::map<std::string, std::vector<int>> ql = {{"q1", {0, 0}}, {"q2", {1, 1}}, {"q3", {0, 1}}};
  std::vector<RankedList> results = {make_list("q1", {"a", "b", "c"}),
                                     make_list("q2", {"c", "a", "b"}),
                                     make_list("q3", {"b", "c", "a"})};
  double base = ndcg_at_k(results, ql, g, 3);

  std::vector<RankedList> permuted = {results[2], results[0], results[1]};
  CHECK(std::abs(ndcg_at_k(permuted, ql, g, 3) - base) < 1e-12);

  // consistent renaming of every gallery id leaves the score untouched
  auto ren = [](const std::string& s) { return "zz-" + s; };
  Gallery g2 = labeled_gallery({ren("a"), ren("b"), ren("c")}, {{0, 1}, {1, 1}, {0, 0}});
  std::vector<RankedList> renamed;
  for (const RankedList& rl : results) {
    RankedList out;
    out.query_id = rl.query_id;
    for (const RankedEntry& e : rl.entries) out.entries.push_back({ren(e.id), e.distance});
    renamed.push_back(out);
  }
  CHECK(ndcg_at_k(renamed, ql, g2, 3) == base);
}

TEST_CASE("report serialization has fixed curve layouts") {
  EvalReport rep;
  rep.top_k = {{1, 0.5}, {5, 0.75}, {20, 1.0}};
  rep.ndcg = {{5, 0.25}};
  rep.gallery_size = 100;
  rep.query_count = 40;

  CHECK(rep.top_k_csv() == "k,accuracy\n1,0.5\n5,0.75\n20,1\n");
  CHECK(rep.ndcg_csv() == "k,ndcg\n5,0.25\n");

  nlohmann::json j = rep.to_json();
  CHECK(j["gallery_size"] == 100);
  CHECK(j["query_count"] == 40);
  CHECK(j["top_k"].size() == 3);
  CHECK(j["top_k"][0][0] == 1);
  CHECK(j["top_k"][0][1] == 0.5);
  CHECK(j["top_k"][2][0] == 20);
  CHECK(j["ndcg"][0][1] == 0.25);
  CHECK(!j.contains("config"));

  rep.config_echo = {{"seed", 7}};
  CHECK(rep.to_json()["config"]["seed"] == 7);
}

TEST_CASE("evaluate_queries runs the standard street-to-shop protocol") {
  // four shop rows on a line; two street views near different rows
  FeatureSet shop;
  shop.ids = {"item-a", "item-b", "item-c", "item-d"};
  shop.rows = Tensor::from({4, 1}, {0.0, 10.0, 20.0, 30.0});
  std::map<std::string, std::vector<int>> labels = {{"item-a", {0, 0}},
                                                    {"item-b", {1, 0}},
                                                    {"item-c", {1, 1}},
                                                    {"item-d", {0, 1}}};
  Gallery g = Gallery::build(shop, labels);

  FeatureSet street;
  street.ids = {"item-a#0", "item-b#0"};
  street.rows = Tensor::from({2, 1}, {1.0, 29.0});
  std::map<std::string, std::vector<int>> ql = {{"item-a#0", {0, 0}}, {"item-b#0", {1, 0}}};

  std::vector<std::size_t> ks = {1, 2, 3};
  EvalReport rep = evaluate_queries(g, street, ql, ks);

  CHECK(rep.gallery_size == 4);
  CHECK(rep.query_count == 2);
  // query a#0 hits at rank 1; query b#0 ranks d(1), c(9), b(19)
  CHECK(rep.top_k.at(1) == 0.5);
  CHECK(rep.top_k.at(2) == 0.5);
  CHECK(rep.top_k.at(3) == 1.0);
  for (std::size_t k : ks) {
    CHECK(rep.ndcg.at(k) >= 0.0);
    CHECK(rep.ndcg.at(k) <= 1.0);
  }

  // the report reproduces a direct metric call on the same rankings
  std::vector<RankedList> direct = g.batch_query(street, 3);
  CHECK(rep.ndcg.at(3) == ndcg_at_k(direct, ql, g, 3));

  CHECK_THROWS_AS(evaluate_queries(g, street, ql, {}), Error);

  Gallery bare = Gallery::build(shop);  // no labels: ndcg cannot run
  CHECK_THROWS_AS(evaluate_queries(bare, street, ql, ks), Error);
}
