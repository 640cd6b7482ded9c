#include "darn/benchmark.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "darn/error.hpp"
#include "darn/features.hpp"

namespace darn {

TrainConfig BenchmarkConfig::default_regime() {
  TrainConfig tc;
  tc.epochs = 40;
  tc.learning_rate = 0.02;
  tc.ranking.rank_weight = 1.0;
  return tc;
}

void BenchmarkConfig::validate() const {
  data.validate();
  check(train_frac > 0.0 && train_frac < 1.0, ErrorCategory::Config,
        "benchmark train fraction must lie in (0,1), got ", train_frac);
  check(!seeds.empty(), ErrorCategory::Config, "benchmark needs at least one seed");
  train.validate();
  check(!k_values.empty(), ErrorCategory::Config, "benchmark needs at least one cutoff k");
  for (std::size_t k : k_values)
    check(k >= 1, ErrorCategory::Config, "cutoff k must be positive");
  check(!sweep_sizes.empty(), ErrorCategory::Config, "sweep needs at least one gallery size");
  check(std::is_sorted(sweep_sizes.begin(), sweep_sizes.end()), ErrorCategory::Config,
        "sweep sizes must be ascending");
  check(sweep_sizes.back() <= data.items, ErrorCategory::Config, "sweep gallery of ",
        sweep_sizes.back(), " exceeds the catalog of ", data.items, " items");
  check(sweep_k >= 1, ErrorCategory::Config, "sweep cutoff must be positive");
}

nlohmann::json BenchmarkConfig::to_json() const {
  return {{"data", data.to_json()},
          {"train_frac", train_frac},
          {"split_seed", split_seed},
          {"seeds", seeds},
          {"train", train.to_json()},
          {"k_values", k_values},
          {"sweep_sizes", sweep_sizes},
          {"sweep_k", sweep_k}};
}

BenchmarkConfig BenchmarkConfig::from_json(const nlohmann::json& j) {
  BenchmarkConfig cfg;
  if (j.contains("data")) cfg.data = SynthConfig::from_json(j.at("data"));
  cfg.train_frac = j.value("train_frac", cfg.train_frac);
  cfg.split_seed = j.value("split_seed", cfg.split_seed);
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("train")) cfg.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("k_values")) cfg.k_values = j.at("k_values").get<std::vector<std::size_t>>();
  if (j.contains("sweep_sizes"))
    cfg.sweep_sizes = j.at("sweep_sizes").get<std::vector<std::size_t>>();
  cfg.sweep_k = j.value("sweep_k", cfg.sweep_k);
  cfg.validate();
  return cfg;
}

namespace {

EvalReport eval_net(const DualNetwork& net, const FeatureSpec& spec,
                    const std::vector<BatchEntry>& gallery_samples,
                    const std::map<std::string, std::vector<int>>& gallery_labels,
                    const std::vector<BatchEntry>& queries,
                    const std::map<std::string, std::vector<int>>& query_labels,
                    std::span<const std::size_t> ks) {
  FeatureSet gal = extract_features(net, gallery_samples, spec);
  FeatureSet q = extract_features(net, queries, spec);
  return evaluate_queries(Gallery::build(gal, gallery_labels), q, query_labels, ks);
}

DualNetwork train_entry(NetworkKind kind, double rank_weight, const BenchmarkConfig& cfg,
                        const AttributeSchema& schema, std::uint64_t seed,
                        const std::vector<TrainExample>& data) {
  DualNetwork net(kind, SubNetworkConfig::desk_default(), schema, seed);
  TrainConfig tc = cfg.train;
  tc.seed = seed + 1000;  // decouple batch order from weight init
  tc.ranking.rank_weight = rank_weight;
  Trainer trainer(net, tc);
  trainer.train(data);
  return net;
}

FeatureSet prefix_rows(const FeatureSet& fs, std::size_t n) {
  const std::size_t d = fs.rows.dim(1);
  FeatureSet out;
  out.ids.assign(fs.ids.begin(), fs.ids.begin() + long(n));
  out.rows = Tensor::from({n, d}, {fs.rows.v.begin(), fs.rows.v.begin() + long(n * d)});
  return out;
}

double relative_drop(double first, double last) {
  return first > 0.0 ? (first - last) / first : 0.0;
}

}  // namespace

const BenchmarkRow& BenchmarkReport::row(const std::string& name) const {
  for (const BenchmarkRow& r : rows)
    if (r.name == name) return r;
  fail(ErrorCategory::Contract, "no benchmark row named '", name, "'");
}

nlohmann::json BenchmarkReport::to_json() const {
  nlohmann::json jr = nlohmann::json::array();
  for (const BenchmarkRow& r : rows) {
    nlohmann::json top, nd, per;
    for (const auto& [k, v] : r.mean_top_k) top[std::to_string(k)] = v;
    for (const auto& [k, v] : r.mean_ndcg) nd[std::to_string(k)] = v;
    per = nlohmann::json::array();
    for (const EvalReport& er : r.per_seed) per.push_back(er.to_json());
    jr.push_back({{"name", r.name},
                  {"features", r.features},
                  {"mean_top_k", std::move(top)},
                  {"mean_ndcg", std::move(nd)},
                  {"per_seed", std::move(per)}});
  }
  nlohmann::json js = nlohmann::json::array();
  for (const SweepPoint& p : sweep)
    js.push_back(
        {{"gallery_size", p.gallery_size}, {"darn", p.darn}, {"untrained", p.untrained}});
  nlohmann::json j{{"rows", std::move(jr)},
                   {"sweep", std::move(js)},
                   {"darn_drop", darn_drop},
                   {"untrained_drop", untrained_drop},
                   {"seconds", seconds}};
  if (!config_echo.is_null()) j["config"] = config_echo;
  return j;
}

std::string BenchmarkReport::table_csv() const {
  std::string out = "row,features,k,top_k,ndcg\n";
  char buf[160];
  for (const BenchmarkRow& r : rows)
    for (const auto& [k, v] : r.mean_top_k) {
      std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.17g,%.17g\n", r.name.c_str(),
                    r.features.c_str(), k, v, r.mean_ndcg.at(k));
      out += buf;
    }
  return out;
}

std::string BenchmarkReport::sweep_csv() const {
  std::string out = "gallery_size,darn,untrained\n";
  char buf[96];
  for (const SweepPoint& p : sweep) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", p.gallery_size, p.darn, p.untrained);
    out += buf;
  }
  return out;
}

BenchmarkReport run_benchmark(const BenchmarkConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  Dataset ds = generate_synthetic(cfg.data);
  auto [train_ds, test_ds] = train_test_split(ds, cfg.train_frac, cfg.split_seed);
  check(!test_ds.items.empty(), ErrorCategory::Config, "benchmark split left no held-out items");
  const std::size_t n_test = test_ds.items.size();
  for (std::size_t s : cfg.sweep_sizes)
    check(s >= n_test, ErrorCategory::Config, "sweep gallery of ", s, " cannot hold all ",
          n_test, " held-out items");

  const std::vector<BatchEntry> gallery_samples = online_samples(ds);
  const std::vector<BatchEntry> queries = offline_samples(test_ds);
  std::map<std::string, std::vector<int>> gallery_labels;
  for (const TrainExample& ex : ds.items) gallery_labels[ex.item_id] = ex.labels;
  std::map<std::string, std::vector<int>> query_labels;
  for (const BatchEntry& q : queries) query_labels[q.id] = q.labels;

  // Held-out shop rows first, then training items in catalog order: prefixes
  // are nested galleries that always contain every query's true match.
  std::vector<BatchEntry> sweep_samples = online_samples(test_ds);
  {
    std::vector<BatchEntry> rest = online_samples(train_ds);
    sweep_samples.insert(sweep_samples.end(), std::make_move_iterator(rest.begin()),
                         std::make_move_iterator(rest.end()));
  }
  std::map<std::string, std::vector<std::string>> truth;
  for (const BatchEntry& q : queries) truth[q.id] = {offline_query_item(q.id)};

  struct RowDef {
    const char* name;
    const char* features;
  };
  // AN/ARN/DARN retrieve with the global feature; the +C5/+C4-5 rows widen
  // the retrieval feature of the same trained dual network.
  static constexpr RowDef kLadder[] = {{"untrained", "fc1+c4+c5"}, {"AN", "fc1"},
                                       {"ARN", "fc1"},            {"DARN", "fc1"},
                                       {"DARN+C5", "fc1+c5"},     {"DARN+C4-5", "fc1+c4+c5"}};

  BenchmarkReport rep;
  for (const RowDef& rd : kLadder) rep.rows.push_back({rd.name, rd.features, {}, {}, {}});

  const FeatureSpec full_spec;  // fc1+c4+c5
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si) {
    const std::uint64_t seed = cfg.seeds[si];
    DualNetwork fresh(NetworkKind::Dual, SubNetworkConfig::desk_default(), ds.schema, seed);
    DualNetwork an = train_entry(NetworkKind::Single, 0.0, cfg, ds.schema, seed, train_ds.items);
    DualNetwork arn = train_entry(NetworkKind::Single, cfg.train.ranking.rank_weight, cfg,
                                  ds.schema, seed, train_ds.items);
    DualNetwork darn = train_entry(NetworkKind::Dual, cfg.train.ranking.rank_weight, cfg,
                                   ds.schema, seed, train_ds.items);
    const DualNetwork* sources[] = {&fresh, &an, &arn, &darn, &darn, &darn};
    for (std::size_t ri = 0; ri < rep.rows.size(); ++ri)
      rep.rows[ri].per_seed.push_back(eval_net(*sources[ri],
                                               FeatureSpec::parse(rep.rows[ri].features),
                                               gallery_samples, gallery_labels, queries,
                                               query_labels, cfg.k_values));

    if (si == 0) {
      const FeatureSet dgal = extract_features(darn, sweep_samples, full_spec);
      const FeatureSet ugal = extract_features(fresh, sweep_samples, full_spec);
      const FeatureSet dq = extract_features(darn, queries, full_spec);
      const FeatureSet uq = extract_features(fresh, queries, full_spec);
      for (std::size_t s : cfg.sweep_sizes) {
        SweepPoint p;
        p.gallery_size = s;
        p.darn = top_k_accuracy(Gallery::build(prefix_rows(dgal, s)).batch_query(dq, cfg.sweep_k),
                                truth, cfg.sweep_k);
        p.untrained =
            top_k_accuracy(Gallery::build(prefix_rows(ugal, s)).batch_query(uq, cfg.sweep_k),
                           truth, cfg.sweep_k);
        rep.sweep.push_back(p);
      }
    }
  }

  const double n_seeds = double(cfg.seeds.size());
  for (BenchmarkRow& r : rep.rows)
    for (std::size_t k : cfg.k_values) {
      double top = 0.0, nd = 0.0;
      for (const EvalReport& er : r.per_seed) {
        top += er.top_k.at(k);
        nd += er.ndcg.at(k);
      }
      r.mean_top_k[k] = top / n_seeds;
      r.mean_ndcg[k] = nd / n_seeds;
    }

  if (!rep.sweep.empty()) {
    rep.darn_drop = relative_drop(rep.sweep.front().darn, rep.sweep.back().darn);
    rep.untrained_drop = relative_drop(rep.sweep.front().untrained, rep.sweep.back().untrained);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.config_echo = cfg.to_json();
  return rep;
}

}  // namespace darn
