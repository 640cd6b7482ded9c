// darn: one executable for the whole pipeline.  Subcommands share a config
// story (defaults <- --config JSON <- flags), echo their resolved config into
// --out, and map error categories onto sysexits-style codes so scripts can
// tell a bad flag from a missing file from a numeric failure.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "darn/benchmark.hpp"
#include "darn/data.hpp"
#include "darn/error.hpp"
#include "darn/features.hpp"
#include "darn/gallery.hpp"
#include "darn/gradcheck.hpp"
#include "darn/metrics.hpp"
#include "darn/network.hpp"
#include "darn/synth.hpp"
#include "darn/trainer.hpp"

namespace fs = std::filesystem;
using namespace darn;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 64;     // bad flags / unknown subcommand
constexpr int kConfig = 65;    // config conflicts, validation, bad data
constexpr int kNoInput = 66;   // a referenced input path does not exist
constexpr int kNumeric = 70;   // numeric failure (incl. a failed grad-check)
constexpr int kIo = 74;        // output-side I/O failure

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::Numeric: return kNumeric;
    case ErrorCategory::Io: return kIo;
    default: return kConfig;
  }
}

void require_input(const fs::path& p) {
  if (!fs::exists(p)) throw MissingInput("no such input path: " + p.string());
}

fs::path ensure_out(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCategory::Io, "cannot create output directory ", dir.string(), ": ",
               ec.message());
  return dir;
}

nlohmann::json load_json(const fs::path& p) {
  require_input(p);
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCategory::Io, "cannot open ", p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::Validation, "bad JSON in ", p.string(), ": ", e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorCategory::Io, "cannot open ", p.string(), " for writing");
  out << text;
  out.flush();
  if (!out) fail(ErrorCategory::Io, "short write to ", p.string());
}

void write_json_file(const fs::path& p, const nlohmann::json& j) {
  write_text(p, j.dump(2) + "\n");
}

// --------------------------------------------------------------------------
// gen-data

struct GenArgs {
  std::string out, config;
  std::size_t items = 0, image = 0, offline_min = 0, offline_max = 0, jitter = 0;
  double missing = 0, brightness = 0, cast_s = 0, clutter = 0, occlusion = 0, contrast = 0,
         bias = 0;
  std::uint64_t seed = 0;
  int threads = 1;
  CLI::Option *o_items = nullptr, *o_image = nullptr, *o_omin = nullptr, *o_omax = nullptr,
              *o_missing = nullptr, *o_seed = nullptr, *o_bright = nullptr, *o_cast = nullptr,
              *o_clutter = nullptr, *o_occl = nullptr, *o_jitter = nullptr, *o_contrast = nullptr,
              *o_bias = nullptr;
};

int run_gen(const GenArgs& a) {
  SynthConfig cfg;
  if (!a.config.empty()) cfg = SynthConfig::from_json(load_json(a.config));
  if (a.o_items->count()) cfg.items = a.items;
  if (a.o_image->count()) cfg.image = a.image;
  if (a.o_omin->count()) cfg.offline_min = a.offline_min;
  if (a.o_omax->count()) cfg.offline_max = a.offline_max;
  if (a.o_missing->count()) cfg.missing_rate = a.missing;
  if (a.o_seed->count()) cfg.seed = a.seed;
  if (a.o_bright->count()) cfg.brightness_sigma = a.brightness;
  if (a.o_cast->count()) cfg.cast_sigma = a.cast_s;
  if (a.o_clutter->count()) cfg.clutter_density = a.clutter;
  if (a.o_occl->count()) cfg.occlusion_prob = a.occlusion;
  if (a.o_jitter->count()) cfg.jitter_max = a.jitter;
  if (a.o_contrast->count()) cfg.contrast_loss = a.contrast;
  if (a.o_bias->count()) cfg.street_bias = a.bias;
  cfg.validate();

  Dataset ds = generate_synthetic(cfg);
  fs::path out = ensure_out(a.out);
  save_dataset(out, ds);
  write_json_file(out / "config.json",
                  {{"command", "gen-data"}, {"threads", a.threads}, {"data", cfg.to_json()}});
  std::cout << "wrote " << ds.items.size() << " items to " << out.string() << "\n";
  return kOk;
}

// --------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data, out, config, kind, features, distance;
  std::size_t epochs = 0, batch = 0;
  double lr = 0, momentum = 0, margin = 0, attr_w = 0, rank_w = 0, train_frac = 1.0;
  std::uint64_t seed = 0, split_seed = 0;
  bool normalize = true;
  int threads = 1;
  CLI::Option *o_kind = nullptr, *o_epochs = nullptr, *o_batch = nullptr, *o_lr = nullptr,
              *o_mom = nullptr, *o_margin = nullptr, *o_attr = nullptr, *o_rank = nullptr,
              *o_feat = nullptr, *o_dist = nullptr, *o_norm = nullptr, *o_seed = nullptr,
              *o_frac = nullptr, *o_split = nullptr;
};

int run_train(const TrainArgs& a) {
  nlohmann::json file = a.config.empty() ? nlohmann::json::object() : load_json(a.config);
  NetworkKind kind = parse_network_kind(file.value("kind", "dual"));
  if (a.o_kind->count()) kind = parse_network_kind(a.kind);
  SubNetworkConfig nc = file.contains("network") ? SubNetworkConfig::from_json(file.at("network"))
                                                 : SubNetworkConfig::desk_default();
  TrainConfig tc =
      file.contains("train") ? TrainConfig::from_json(file.at("train")) : TrainConfig{};
  if (a.o_epochs->count()) tc.epochs = a.epochs;
  if (a.o_batch->count()) tc.batch_triplets = a.batch;
  if (a.o_lr->count()) tc.learning_rate = a.lr;
  if (a.o_mom->count()) tc.momentum = a.momentum;
  if (a.o_margin->count()) tc.ranking.margin = a.margin;
  if (a.o_attr->count()) tc.ranking.attr_weight = a.attr_w;
  if (a.o_rank->count()) tc.ranking.rank_weight = a.rank_w;
  if (a.o_feat->count()) tc.ranking.features = FeatureSpec::parse(a.features);
  if (a.o_dist->count()) {
    if (a.distance == "euclidean")
      tc.ranking.distance = Distance::Euclidean;
    else if (a.distance == "squared")
      tc.ranking.distance = Distance::SquaredEuclidean;
    else
      fail(ErrorCategory::Config, "unknown distance '", a.distance, "'");
  }
  if (a.o_norm->count()) tc.ranking.normalize = a.normalize;
  std::uint64_t init_seed = file.value("init_seed", tc.seed);
  if (a.o_seed->count()) {
    tc.seed = a.seed;
    init_seed = a.seed;
  }
  double train_frac = file.value("train_frac", 1.0);
  std::uint64_t split_seed = file.value("split_seed", std::uint64_t{0});
  if (a.o_frac->count()) train_frac = a.train_frac;
  if (a.o_split->count()) split_seed = a.split_seed;
  tc.validate();

  require_input(fs::path(a.data) / "manifest.json");
  Dataset ds = load_dataset(a.data);
  std::vector<TrainExample> corpus;
  if (train_frac < 1.0)
    corpus = train_test_split(ds, train_frac, split_seed).first.items;
  else
    corpus = ds.items;

  DualNetwork net(kind, nc, ds.schema, init_seed);
  Trainer trainer(net, tc);
  std::vector<StepRecord> history = trainer.train(corpus);

  fs::path out = ensure_out(a.out);
  save_checkpoint(out / "model.ckpt", trainer.snapshot());
  std::ostringstream hist;
  write_history_csv(hist, history);
  write_text(out / "history.csv", hist.str());
  write_json_file(out / "config.json", {{"command", "train"},
                                        {"data", a.data},
                                        {"kind", network_kind_name(kind)},
                                        {"network", nc.to_json()},
                                        {"train", tc.to_json()},
                                        {"init_seed", init_seed},
                                        {"train_frac", train_frac},
                                        {"split_seed", split_seed},
                                        {"threads", a.threads}});
  std::cout << "trained " << tc.epochs << " epochs on " << corpus.size() << " items; checkpoint "
            << (out / "model.ckpt").string() << "\n";
  return kOk;
}

// --------------------------------------------------------------------------
// extract

struct ExtractArgs {
  std::string model, data, out, features = "fc1+c4+c5", side = "both", pca_model;
  std::size_t pca_dims = 0;
  int threads = 1;
  CLI::Option* o_pca_dims = nullptr;
};

int run_extract(const ExtractArgs& a) {
  require_input(a.model);
  require_input(fs::path(a.data) / "manifest.json");
  if (a.o_pca_dims->count() && !a.pca_model.empty())
    fail(ErrorCategory::Config, "--pca-dims fits a new projection and --pca-model applies a "
                                "saved one; pick one");
  const FeatureSpec spec = FeatureSpec::parse(a.features);

  Checkpoint ckpt = load_checkpoint(a.model);
  DualNetwork net = network_from_checkpoint(ckpt);
  Dataset ds = load_dataset(a.data);

  std::vector<BatchEntry> samples;
  if (a.side == "online") {
    samples = online_samples(ds);
  } else if (a.side == "offline") {
    samples = offline_samples(ds);
  } else if (a.side == "both") {
    samples = online_samples(ds);
    std::vector<BatchEntry> off = offline_samples(ds);
    samples.insert(samples.end(), std::make_move_iterator(off.begin()),
                   std::make_move_iterator(off.end()));
  } else {
    fail(ErrorCategory::Config, "side must be online, offline or both, got '", a.side, "'");
  }

  fs::path out = ensure_out(a.out);
  FeatureSet feats;
  nlohmann::json pca_echo;
  if (!a.pca_model.empty()) {
    require_input(a.pca_model);
    PcaModel pca = load_pca(a.pca_model);
    feats = extract_features(net, samples, spec, &pca);
    pca_echo = {{"applied", a.pca_model}};
  } else if (a.pca_dims > 0) {
    feats = extract_features(net, samples, spec);
    PcaModel pca = fit_pca(feats.rows, a.pca_dims);
    feats.rows = pca.project(feats.rows);
    save_pca(out / "pca.model", pca);
    pca_echo = {{"fitted_dims", a.pca_dims}};
  } else {
    feats = extract_features(net, samples, spec);
  }
  save_feature_set(out / "features", feats);
  nlohmann::json echo{{"command", "extract"}, {"model", a.model},       {"data", a.data},
                      {"features", a.features}, {"side", a.side},       {"threads", a.threads}};
  if (!pca_echo.is_null()) echo["pca"] = pca_echo;
  write_json_file(out / "config.json", echo);
  std::cout << "extracted " << feats.ids.size() << " rows of dim "
            << (feats.ids.empty() ? 0 : feats.rows.dim(1)) << "\n";
  return kOk;
}

// --------------------------------------------------------------------------
// index

struct IndexArgs {
  std::string features, data, out;
  int threads = 1;
};

int run_index(const IndexArgs& a) {
  require_input(a.features + ".tnsr");
  require_input(a.features + ".ids");
  FeatureSet feats = load_feature_set(a.features);
  std::map<std::string, std::vector<int>> labels;
  if (!a.data.empty()) {
    require_input(fs::path(a.data) / "manifest.json");
    Dataset ds = load_dataset(a.data);
    for (const TrainExample& ex : ds.items) labels[ex.item_id] = ex.labels;
  }
  Gallery g = Gallery::build(feats, labels);
  fs::path out = ensure_out(a.out);
  save_gallery(out, g);
  write_json_file(out / "config.json", {{"command", "index"},
                                        {"features", a.features},
                                        {"data", a.data},
                                        {"labeled", !labels.empty()},
                                        {"threads", a.threads}});
  std::cout << "indexed " << g.size() << " rows\n";
  return kOk;
}

// --------------------------------------------------------------------------
// query

struct QueryArgs {
  std::string index, queries, out;
  std::size_t k = 20;
  int threads = 1;
};

int run_query(const QueryArgs& a) {
  require_input(fs::path(a.index) / "features.tnsr");
  require_input(a.queries + ".tnsr");
  Gallery g = load_gallery(a.index);
  FeatureSet q = load_feature_set(a.queries);
  std::vector<RankedList> results = g.batch_query(q, a.k);
  fs::path out = ensure_out(a.out);
  std::ostringstream csv;
  write_results_csv(csv, results);
  write_text(out / "results.csv", csv.str());
  write_json_file(out / "config.json", {{"command", "query"},
                                        {"index", a.index},
                                        {"queries", a.queries},
                                        {"k", a.k},
                                        {"threads", a.threads}});
  std::cout << results.size() << " queries against " << g.size() << " rows\n";
  return kOk;
}

// --------------------------------------------------------------------------
// evaluate

struct EvalArgs {
  std::string index, queries, data, out;
  std::vector<std::size_t> ks{1, 5, 10, 20};
  int threads = 1;
};

int run_evaluate(const EvalArgs& a) {
  require_input(fs::path(a.index) / "features.tnsr");
  require_input(a.queries + ".tnsr");
  require_input(fs::path(a.data) / "manifest.json");
  Gallery g = load_gallery(a.index);
  check(!g.labels().empty(), ErrorCategory::Config,
        "evaluate needs an index built with --data so gallery rows carry labels");
  FeatureSet q = load_feature_set(a.queries);
  Dataset ds = load_dataset(a.data);
  std::map<std::string, std::vector<int>> by_item;
  for (const TrainExample& ex : ds.items) by_item[ex.item_id] = ex.labels;
  std::map<std::string, std::vector<int>> qlabels;
  for (const std::string& id : q.ids) {
    auto it = by_item.find(offline_query_item(id));
    check(it != by_item.end(), ErrorCategory::Validation, "query ", id,
          " names an item absent from ", a.data);
    qlabels[id] = it->second;
  }
  std::vector<std::size_t> ks = a.ks;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  EvalReport rep = evaluate_queries(g, q, qlabels, ks);
  nlohmann::json echo{{"command", "evaluate"}, {"index", a.index},   {"queries", a.queries},
                      {"data", a.data},        {"k_values", ks},     {"threads", a.threads}};
  rep.config_echo = echo;
  fs::path out = ensure_out(a.out);
  write_json_file(out / "report.json", rep.to_json());
  write_text(out / "top_k.csv", rep.top_k_csv());
  write_text(out / "ndcg.csv", rep.ndcg_csv());
  write_json_file(out / "config.json", echo);
  for (std::size_t k : ks)
    std::cout << "top-" << k << " " << rep.top_k.at(k) << "  ndcg@" << k << " " << rep.ndcg.at(k)
              << "\n";
  return kOk;
}

// --------------------------------------------------------------------------
// ablate

struct AblateArgs {
  std::string out, config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> ks, sweep_sizes;
  std::size_t epochs = 0, items = 0, sweep_k = 0;
  double lr = 0, rank_w = 0, train_frac = 0;
  int threads = 1;
  CLI::Option *o_seeds = nullptr, *o_ks = nullptr, *o_sweep = nullptr, *o_epochs = nullptr,
              *o_items = nullptr, *o_sweep_k = nullptr, *o_lr = nullptr, *o_rank = nullptr,
              *o_frac = nullptr;
};

int run_ablate(const AblateArgs& a) {
  BenchmarkConfig cfg;
  if (!a.config.empty()) cfg = BenchmarkConfig::from_json(load_json(a.config));
  if (a.o_seeds->count()) cfg.seeds = a.seeds;
  if (a.o_ks->count()) cfg.k_values = a.ks;
  if (a.o_sweep->count()) cfg.sweep_sizes = a.sweep_sizes;
  if (a.o_epochs->count()) cfg.train.epochs = a.epochs;
  if (a.o_items->count()) cfg.data.items = a.items;
  if (a.o_sweep_k->count()) cfg.sweep_k = a.sweep_k;
  if (a.o_lr->count()) cfg.train.learning_rate = a.lr;
  if (a.o_rank->count()) cfg.train.ranking.rank_weight = a.rank_w;
  if (a.o_frac->count()) cfg.train_frac = a.train_frac;
  cfg.validate();

  BenchmarkReport rep = run_benchmark(cfg);
  fs::path out = ensure_out(a.out);
  nlohmann::json j = rep.to_json();
  j.erase("seconds");  // timings live in run.log so reruns byte-match
  write_json_file(out / "report.json", j);
  write_text(out / "table.csv", rep.table_csv());
  write_text(out / "sweep.csv", rep.sweep_csv());
  char log[64];
  std::snprintf(log, sizeof log, "elapsed_seconds=%.3f\n", rep.seconds);
  write_text(out / "run.log", log);
  write_json_file(out / "config.json",
                  {{"command", "ablate"}, {"threads", a.threads}, {"benchmark", cfg.to_json()}});
  std::cout << rep.table_csv();
  std::cout << "sweep drop: darn " << rep.darn_drop << " untrained " << rep.untrained_drop
            << "\n";
  return kOk;
}

// --------------------------------------------------------------------------
// grad-check

struct GradArgs {
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;
};

int run_gradcheck(const GradArgs& a) {
  GradAudit audit = run_gradient_audit(a.seed);
  for (const AuditEntry& e : audit.entries) {
    std::printf("%-32s max_rel %.3e  coords %zu\n", e.name.c_str(), e.report.max_rel_error,
                e.report.coords_checked);
  }
  const double worst = audit.max_rel_error();
  const bool pass = worst < 1e-4;
  std::printf("max relative error %.6e over %zu coordinates: %s\n", worst,
              audit.coords_checked(), pass ? "PASS" : "FAIL");
  if (!a.out.empty()) {
    fs::path out = ensure_out(a.out);
    write_json_file(out / "gradcheck.json", audit.to_json());
    write_json_file(out / "config.json",
                    {{"command", "grad-check"}, {"seed", a.seed}, {"threads", a.threads}});
  }
  return pass ? kOk : kNumeric;
}

void check_threads(int threads) {
  check(threads >= 1, ErrorCategory::Config, "--threads must be at least 1, got ", threads);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-tower attribute/ranking retrieval pipeline"};
  app.require_subcommand(1);

  GenArgs gen;
  TrainArgs train;
  ExtractArgs extract;
  IndexArgs index;
  QueryArgs query;
  EvalArgs evaluate;
  AblateArgs ablate;
  GradArgs grad;
  int rc = kOk;

  {
    CLI::App* c = app.add_subcommand("gen-data", "render a synthetic paired catalog");
    c->add_option("--out", gen.out, "output directory")->required()->envname("DARN_OUT");
    c->add_option("--config", gen.config, "JSON config file");
    gen.o_items = c->add_option("--items", gen.items, "catalog size");
    gen.o_image = c->add_option("--image", gen.image, "square image size");
    gen.o_omin = c->add_option("--offline-min", gen.offline_min, "min street views per item");
    gen.o_omax = c->add_option("--offline-max", gen.offline_max, "max street views per item");
    gen.o_missing = c->add_option("--missing-rate", gen.missing, "label masking rate");
    gen.o_seed = c->add_option("--seed", gen.seed, "generator seed")->envname("DARN_SEED");
    gen.o_bright = c->add_option("--brightness-sigma", gen.brightness, "street brightness spread");
    gen.o_cast = c->add_option("--cast-sigma", gen.cast_s, "street color cast spread");
    gen.o_clutter = c->add_option("--clutter-density", gen.clutter, "background clutter density");
    gen.o_occl = c->add_option("--occlusion-prob", gen.occlusion, "occluding patch probability");
    gen.o_jitter = c->add_option("--jitter-max", gen.jitter, "max geometric shift");
    gen.o_contrast = c->add_option("--contrast-loss", gen.contrast, "fixed street contrast loss");
    gen.o_bias = c->add_option("--street-bias", gen.bias, "fixed street channel lift");
    c->add_option("--threads", gen.threads, "worker threads (1 = deterministic)")
        ->envname("DARN_THREADS");
    c->callback([&] {
      check_threads(gen.threads);
      rc = run_gen(gen);
    });
  }
  {
    CLI::App* c = app.add_subcommand("train", "fit a network on a generated dataset");
    c->add_option("--data", train.data, "dataset directory")->required();
    c->add_option("--out", train.out, "output directory")->required()->envname("DARN_OUT");
    c->add_option("--config", train.config, "JSON config file");
    train.o_kind = c->add_option("--kind", train.kind, "dual or single tower");
    train.o_epochs = c->add_option("--epochs", train.epochs, "training epochs");
    train.o_batch = c->add_option("--batch-triplets", train.batch, "triplets per step");
    train.o_lr = c->add_option("--learning-rate", train.lr, "SGD learning rate");
    train.o_mom = c->add_option("--momentum", train.momentum, "SGD momentum");
    train.o_margin = c->add_option("--margin", train.margin, "triplet hinge margin");
    train.o_attr = c->add_option("--attr-weight", train.attr_w, "attribute loss weight");
    train.o_rank = c->add_option("--rank-weight", train.rank_w, "ranking loss weight");
    train.o_feat = c->add_option("--features", train.features, "triplet feature spec");
    train.o_dist = c->add_option("--distance", train.distance, "euclidean or squared");
    train.o_norm = c->add_flag("--normalize,!--no-normalize", train.normalize,
                               "normalize triplet feature segments");
    train.o_seed = c->add_option("--seed", train.seed, "init + shuffle seed")
                       ->envname("DARN_SEED");
    train.o_frac = c->add_option("--train-frac", train.train_frac, "fraction trained on");
    train.o_split = c->add_option("--split-seed", train.split_seed, "held-out split seed");
    c->add_option("--threads", train.threads, "worker threads (1 = deterministic)")
        ->envname("DARN_THREADS");
    c->callback([&] {
      check_threads(train.threads);
      rc = run_train(train);
    });
  }
  {
    CLI::App* c = app.add_subcommand("extract", "run images through a checkpoint");
    c->add_option("--model", extract.model, "checkpoint file")->required();
    c->add_option("--data", extract.data, "dataset directory")->required();
    c->add_option("--out", extract.out, "output directory")->required()->envname("DARN_OUT");
    c->add_option("--features", extract.features, "feature spec, e.g. fc1+c4+c5");
    c->add_option("--side", extract.side, "online, offline or both");
    extract.o_pca_dims = c->add_option("--pca-dims", extract.pca_dims, "fit a projection");
    c->add_option("--pca-model", extract.pca_model, "apply a saved projection");
    c->add_option("--threads", extract.threads, "worker threads (1 = deterministic)")
        ->envname("DARN_THREADS");
    c->callback([&] {
      check_threads(extract.threads);
      rc = run_extract(extract);
    });
  }
  {
    CLI::App* c = app.add_subcommand("index", "build a searchable gallery");
    c->add_option("--features", index.features, "feature base path (no extension)")->required();
    c->add_option("--data", index.data, "dataset directory for row labels");
    c->add_option("--out", index.out, "output directory")->required()->envname("DARN_OUT");
    c->add_option("--threads", index.threads, "worker threads (1 = deterministic)")
        ->envname("DARN_THREADS");
    c->callback([&] {
      check_threads(index.threads);
      rc = run_index(index);
    });
  }
  {
    CLI::App* c = app.add_subcommand("query", "rank a gallery for query features");
    c->add_option("--index", query.index, "gallery directory")->required();
    c->add_option("--queries", query.queries, "query feature base path")->required();
    c->add_option("--k", query.k, "results per query");
    c->add_option("--out", query.out, "output directory")->required()->envname("DARN_OUT");
    c->add_option("--threads", query.threads, "worker threads (1 = deterministic)")
        ->envname("DARN_THREADS");
    c->callback([&] {
      check_threads(query.threads);
      rc = run_query(query);
    });
  }
  {
    CLI::App* c = app.add_subcommand("evaluate", "score retrieval quality");
    c->add_option("--index", evaluate.index, "labeled gallery directory")->required();
    c->add_option("--queries", evaluate.queries, "query feature base path")->required();
    c->add_option("--data", evaluate.data, "dataset directory for query labels")->required();
    c->add_option("--k", evaluate.ks, "cutoffs, repeatable");
    c->add_option("--out", evaluate.out, "output directory")->required()->envname("DARN_OUT");
    c->add_option("--threads", evaluate.threads, "worker threads (1 = deterministic)")
        ->envname("DARN_THREADS");
    c->callback([&] {
      check_threads(evaluate.threads);
      rc = run_evaluate(evaluate);
    });
  }
  {
    CLI::App* c = app.add_subcommand("ablate", "train and score the variant ladder");
    c->add_option("--out", ablate.out, "output directory")->required()->envname("DARN_OUT");
    c->add_option("--config", ablate.config, "JSON benchmark config");
    ablate.o_seeds = c->add_option("--seeds", ablate.seeds, "training seeds, repeatable");
    ablate.o_ks = c->add_option("--k", ablate.ks, "cutoffs, repeatable");
    ablate.o_sweep = c->add_option("--sweep-sizes", ablate.sweep_sizes, "gallery sizes");
    ablate.o_sweep_k = c->add_option("--sweep-k", ablate.sweep_k, "sweep cutoff");
    ablate.o_epochs = c->add_option("--epochs", ablate.epochs, "training epochs");
    ablate.o_items = c->add_option("--items", ablate.items, "catalog size");
    ablate.o_lr = c->add_option("--learning-rate", ablate.lr, "SGD learning rate");
    ablate.o_rank = c->add_option("--rank-weight", ablate.rank_w, "ranking loss weight");
    ablate.o_frac = c->add_option("--train-frac", ablate.train_frac, "training fraction");
    c->add_option("--threads", ablate.threads, "worker threads (1 = deterministic)")
        ->envname("DARN_THREADS");
    c->callback([&] {
      check_threads(ablate.threads);
      rc = run_ablate(ablate);
    });
  }
  {
    CLI::App* c = app.add_subcommand("grad-check", "finite-difference audit of all gradients");
    c->add_option("--seed", grad.seed, "audit seed")->envname("DARN_SEED");
    c->add_option("--out", grad.out, "optional report directory")->envname("DARN_OUT");
    c->add_option("--threads", grad.threads, "worker threads (1 = deterministic)")
        ->envname("DARN_THREADS");
    c->callback([&] {
      check_threads(grad.threads);
      rc = run_gradcheck(grad);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error category=usage: " << e.what() << "\n";
    return kUsage;
  } catch (const MissingInput& e) {
    std::cerr << "error category=missing-input: " << e.what() << "\n";
    return kNoInput;
  } catch (const Error& e) {
    std::cerr << "error category=" << Error::category_name(e.category()) << ": " << e.what()
              << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error category=internal: " << e.what() << "\n";
    return kNumeric;
  }
  return rc;
}
