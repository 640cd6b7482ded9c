#include "darn/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <utility>

#include "darn/error.hpp"
#include "darn/losses.hpp"
#include "darn/network.hpp"
#include "darn/rng.hpp"
#include "darn/synth.hpp"

namespace darn {
namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.v) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Rows bounded away from zero so row normalization stays smooth under probes.
Tensor random_nonzero_rows(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.v) {
    v = 0.5 + rng.uniform();
    if (rng.uniform() < 0.5) v = -v;
  }
  return t;
}

using BuildFn = std::function<Var(Graph&, std::vector<Var>&)>;

LossProbe run_graph(std::vector<Tensor>& params, const BuildFn& build,
                    std::vector<Tensor>* grads) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (Tensor& p : params) leaves.push_back(g.leaf(p, true));
  Var loss = build(g, leaves);
  if (grads) {
    g.backward(loss);
    grads->clear();
    for (Var v : leaves) grads->push_back(v.grad());
  }
  return {loss.value().v[0], g.fd_hazard_margin(), g.region_signature()};
}

GradCheckReport fd_check(std::vector<Tensor>& params, const BuildFn& build, std::uint64_t seed,
                         std::size_t coords) {
  std::vector<Tensor> grads;
  run_graph(params, build, &grads);
  std::vector<ParamGrad> pg;
  pg.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) pg.emplace_back(&params[i], &grads[i]);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.coords_per_tensor = coords;
  return finite_difference_check([&]() { return run_graph(params, build, nullptr); }, pg, opt);
}

// Mixes the concatenated/gathered tensor through a fixed projection so every
// upstream coordinate receives a distinct gradient.
Var project_and_sum(Graph& g, Var rows, std::size_t in_dim, std::uint64_t seed) {
  Rng rng(seed);
  Var w = g.leaf(random_tensor({in_dim, 3}, rng));
  Var b = g.leaf(random_tensor({3}, rng));
  return g.sum(g.fully_connected(rows, w, b));
}

GradCheckReport check_total_loss(std::uint64_t seed) {
  SynthConfig sc;
  sc.items = 6;
  sc.missing_rate = 0.2;  // exercise the masked-branch path
  sc.seed = Rng::mix(seed, 99);
  Dataset ds = generate_synthetic(sc);

  DualNetwork net(NetworkKind::Dual, SubNetworkConfig::desk_default(), ds.schema, seed);
  std::vector<BatchEntry> batch;
  std::vector<TripletIndices> triplets;
  for (std::size_t t = 0; t < 2; ++t) {
    const TrainExample& a = ds.items[t];
    const TrainExample& b = ds.items[t + 2];
    const std::size_t base = batch.size();
    batch.push_back({a.item_id, Domain::Offline, a.offlines.front(), a.labels});
    batch.push_back({a.item_id, Domain::Online, a.online, a.labels});
    batch.push_back({b.item_id, Domain::Online, b.online, b.labels});
    triplets.push_back({base, base + 1, base + 2});
  }
  const RankingConfig rc;

  auto forward = [&](std::vector<Tensor>* grads) {
    Graph g;
    NetworkBinding binding = bind_network(g, net, true);
    RoutedBatch routed = forward_batch(g, net, binding, batch);
    LossBreakdown loss = total_loss(g, routed, batch, triplets, rc, net.schema());
    if (grads) {
      g.backward(loss.total);
      grads->clear();
      for (const auto& net_vars : binding.per_net)
        for (Var v : net_vars) grads->push_back(v.grad());
    }
    return LossProbe{loss.total.value().v[0], g.fd_hazard_margin(), g.region_signature()};
  };

  std::vector<Tensor> grads;
  forward(&grads);
  std::vector<Param*> params = net.all_params();
  check(params.size() == grads.size(), ErrorCategory::Contract,
        "parameter/gradient count mismatch in the loss audit");
  std::vector<ParamGrad> pg;
  pg.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) pg.emplace_back(&params[i]->value, &grads[i]);
  GradCheckOptions opt;
  opt.seed = Rng::mix(seed, 0x70757461);
  opt.coords_per_tensor = 4;  // ~100 tensors keep the audit under the time box
  return finite_difference_check([&]() { return forward(nullptr); }, pg, opt);
}

}  // namespace

double GradAudit::max_rel_error() const {
  double m = 0.0;
  for (const AuditEntry& e : entries) m = std::max(m, e.report.max_rel_error);
  return m;
}

std::size_t GradAudit::coords_checked() const {
  std::size_t n = 0;
  for (const AuditEntry& e : entries) n += e.report.coords_checked;
  return n;
}

const AuditEntry& GradAudit::worst() const {
  check(!entries.empty(), ErrorCategory::Contract, "empty gradient audit");
  const AuditEntry* w = &entries.front();
  for (const AuditEntry& e : entries)
    if (e.report.max_rel_error > w->report.max_rel_error) w = &e;
  return *w;
}

nlohmann::json GradAudit::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const AuditEntry& e : entries)
    arr.push_back({{"name", e.name},
                   {"max_rel_error", e.report.max_rel_error},
                   {"coords_checked", e.report.coords_checked},
                   {"kink_resamples", e.report.kink_resamples},
                   {"kink_exhausted", e.report.kink_exhausted}});
  return {{"entries", std::move(arr)},
          {"max_rel_error", max_rel_error()},
          {"coords_checked", coords_checked()}};
}

GradAudit run_gradient_audit(std::uint64_t seed) {
  GradAudit audit;
  std::uint64_t idx = 0;
  auto add = [&](const char* name, std::vector<Tensor> params, BuildFn build,
                 std::size_t coords = 8) {
    GradCheckReport r = fd_check(params, build, Rng::mix(seed, ++idx), coords);
    audit.entries.push_back({name, r});
  };
  Rng rng(Rng::mix(seed, 0xabcdef));

  add("conv2d",
      {random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng),
       random_tensor({4}, rng)},
      [](Graph& g, std::vector<Var>& L) {
        Var same = g.conv2d(L[0], L[1], L[2], 1, 1);
        Var strided = g.conv2d(L[0], L[1], L[2], 2, 0);
        return g.add(g.sum(same), g.sum(strided));
      });
  add("maxpool", {random_tensor({2, 3, 6, 6}, rng)}, [](Graph& g, std::vector<Var>& L) {
    return g.add(g.sum(g.maxpool(L[0], 2, 2)), g.sum(g.maxpool(L[0], 3, 1)));
  });
  add("adaptive_maxpool_3x3", {random_tensor({2, 4, 7, 5}, rng)},
      [](Graph& g, std::vector<Var>& L) { return g.sum(g.adaptive_maxpool_3x3(L[0])); });
  add("fully_connected",
      {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng), random_tensor({4}, rng)},
      [](Graph& g, std::vector<Var>& L) {
        return g.sum(g.fully_connected(L[0], L[1], L[2]));
      });
  add("relu", {random_tensor({3, 7}, rng)},
      [](Graph& g, std::vector<Var>& L) { return g.sum(g.relu(L[0])); });
  {
    const std::uint64_t s = Rng::mix(seed, 0xf1a7);
    add("flatten", {random_tensor({2, 3, 2, 2}, rng)}, [s](Graph& g, std::vector<Var>& L) {
      return project_and_sum(g, g.flatten(L[0]), 12, s);
    });
  }
  {
    const std::uint64_t s = Rng::mix(seed, 0xc09ca7);
    add("concat",
        {random_tensor({2, 3}, rng), random_tensor({2, 4}, rng), random_tensor({2, 2}, rng)},
        [s](Graph& g, std::vector<Var>& L) {
          return project_and_sum(g, g.concat({L[0], L[1], L[2]}), 9, s);
        });
  }
  {
    const std::uint64_t s = Rng::mix(seed, 0x9a7e);
    add("gather_rows", {random_tensor({5, 3}, rng)}, [s](Graph& g, std::vector<Var>& L) {
      return project_and_sum(g, g.gather_rows(L[0], {4, 0, 2, 2}), 3, s);
    });
  }
  {
    const std::uint64_t s = Rng::mix(seed, 0x12b4);
    add("l2_normalize_rows", {random_nonzero_rows({3, 4}, rng)},
        [s](Graph& g, std::vector<Var>& L) {
          return project_and_sum(g, g.l2_normalize_rows(L[0]), 4, s);
        });
  }
  add("softmax_cross_entropy", {random_tensor({4, 5}, rng)},
      [](Graph& g, std::vector<Var>& L) {
        return g.softmax_cross_entropy(L[0], {0, 3, kMissingLabel, 2});
      });
  add("triplet_ranking",
      {random_tensor({4, 3}, rng), random_tensor({4, 3}, rng), random_tensor({4, 3}, rng),
       random_tensor({3, 3}, rng), random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)},
      [](Graph& g, std::vector<Var>& L) {
        Var euclid = g.triplet_ranking(L[0], L[1], L[2], 0.3, Distance::Euclidean);
        Var squared = g.triplet_ranking(L[3], L[4], L[5], 0.3, Distance::SquaredEuclidean);
        return g.add(euclid, squared);
      });
  {
    const std::uint64_t s = Rng::mix(seed, 0xadd);
    add("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
        [s](Graph& g, std::vector<Var>& L) {
          return project_and_sum(g, g.add(L[0], L[1]), 4, s);
        });
  }
  {
    const std::uint64_t s = Rng::mix(seed, 0x5ca1e);
    add("scale", {random_tensor({3, 4}, rng)}, [s](Graph& g, std::vector<Var>& L) {
      return project_and_sum(g, g.scale(L[0], 1.7), 4, s);
    });
  }
  add("sum", {random_tensor({4, 5}, rng)},
      [](Graph& g, std::vector<Var>& L) { return g.sum(L[0]); });

  audit.entries.push_back({"total_loss (desk dual network)", check_total_loss(seed)});
  return audit;
}

}  // namespace darn
