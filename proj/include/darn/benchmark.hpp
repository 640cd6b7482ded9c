#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "darn/metrics.hpp"
#include "darn/synth.hpp"
#include "darn/trainer.hpp"

namespace darn {

// Ablation ladder + gallery-size sweep over the synthetic catalog.
//
// Per seed three networks are trained under one regime: AN (single tower,
// attribute loss only), ARN (single tower, both losses) and DARN (dual
// towers, both losses).  The untrained row reads features off a freshly
// initialized dual network, and the DARN+C5 / DARN+C4-5 rows re-extract
// richer features from the same trained dual network — the ladder varies
// the retrieval feature, not the training run.  Queries are the held-out
// items' street views; the gallery holds every item's shop rendering.
struct BenchmarkConfig {
  SynthConfig data;
  double train_frac = 0.8;
  std::uint64_t split_seed = 5;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  TrainConfig train = default_regime();
  std::vector<std::size_t> k_values = {1, 5, 10, 20};
  // Nested galleries for the sweep: the held-out items' shop rows plus the
  // first (size - held_out) training items, so every query's match stays
  // present.  Sizes must lie in [held_out, items].
  std::vector<std::size_t> sweep_sizes = {100, 200, 300, 400, 500};
  std::size_t sweep_k = 20;

  // Calibrated so all three trainings converge at desk scale.
  static TrainConfig default_regime();
  void validate() const;
  nlohmann::json to_json() const;
  static BenchmarkConfig from_json(const nlohmann::json& j);  // absent keys keep defaults
};

struct BenchmarkRow {
  std::string name;
  std::string features;                     // e.g. "fc1+c4+c5"
  std::vector<EvalReport> per_seed;         // aligned with config seeds
  std::map<std::size_t, double> mean_top_k;  // k -> mean accuracy over seeds
  std::map<std::size_t, double> mean_ndcg;
};

struct SweepPoint {
  std::size_t gallery_size = 0;
  double darn = 0.0;       // trained dual, full features
  double untrained = 0.0;  // fresh dual, full features
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;  // ladder order
  std::vector<SweepPoint> sweep;   // ascending size, first seed's networks
  double darn_drop = 0.0;          // relative accuracy drop over the sweep
  double untrained_drop = 0.0;
  double seconds = 0.0;
  nlohmann::json config_echo;

  const BenchmarkRow& row(const std::string& name) const;
  nlohmann::json to_json() const;
  std::string table_csv() const;  // row,features,k,top_k,ndcg
  std::string sweep_csv() const;  // gallery_size,darn,untrained
};

BenchmarkReport run_benchmark(const BenchmarkConfig& cfg);

}  // namespace darn
