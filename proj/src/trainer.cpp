#include "darn/trainer.hpp"

#include <algorithm>
#include <utility>

#include "darn/rng.hpp"

namespace darn {

void TrainConfig::validate() const {
  check(batch_triplets >= 1, ErrorCategory::Config, "batch_triplets must be at least 1");
  check(learning_rate > 0.0, ErrorCategory::Config, "learning_rate must be positive, got ",
        learning_rate);
  check(momentum >= 0.0 && momentum < 1.0, ErrorCategory::Config,
        "momentum must lie in [0,1), got ", momentum);
  ranking.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_triplets", batch_triplets},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"seed", seed},
          {"ranking", ranking.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_triplets = j.value("batch_triplets", cfg.batch_triplets);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("ranking")) cfg.ranking = RankingConfig::from_json(j.at("ranking"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::Config, "bad training config: ", e.what());
  }
  cfg.validate();
  return cfg;
}

void write_history_csv(std::ostream& os, const std::vector<StepRecord>& history) {
  os << "epoch,step,total,attr,rank\n";
  char buf[96];
  for (const StepRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g\n", r.epoch, r.step, r.total,
                  r.attribute, r.ranking);
    os << buf;
  }
}

Trainer::Trainer(DualNetwork& net, TrainConfig config)
    : net_(net), config_(std::move(config)) {
  config_.validate();
  for (Param* p : net_.all_params()) momentum_.push_back(Tensor::zeros(p->value.shape));
}

static void validate_examples(const DualNetwork& net, const std::vector<TrainExample>& data) {
  const SubNetworkConfig& cfg = net.config();
  const std::vector<std::size_t> want{std::size_t(cfg.in_channels), std::size_t(cfg.image_h),
                                      std::size_t(cfg.image_w)};
  for (const TrainExample& ex : data) {
    check(ex.online.shape == want, ErrorCategory::Dimension, "item ", ex.item_id,
          ": online image has shape ", ex.online.shape_str(), ", network expects [",
          cfg.in_channels, ",", cfg.image_h, ",", cfg.image_w, "]");
    for (const Tensor& t : ex.offlines)
      check(t.shape == want, ErrorCategory::Dimension, "item ", ex.item_id,
            ": offline image has shape ", t.shape_str());
    check(ex.labels.size() == net.schema().size(), ErrorCategory::Dimension, "item ", ex.item_id,
          ": ", ex.labels.size(), " labels for ", net.schema().size(), " categories");
  }
}

std::vector<StepRecord> Trainer::run_epoch(const std::vector<TrainExample>& data) {
  validate_examples(net_, data);
  const std::size_t epoch = next_epoch_++;

  // Anchor/positive pairs in item order, then one shuffle for the epoch.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data[i].offlines.size(); ++j) pairs.emplace_back(i, j);

  std::vector<StepRecord> history;
  if (pairs.empty()) return history;
  check(data.size() >= 2, ErrorCategory::Sampling,
        "need at least 2 items to draw ranking negatives, got ", data.size());

  Rng rng(Rng::mix(config_.seed, epoch));
  rng.shuffle(pairs);

  std::size_t step = 0;
  for (std::size_t begin = 0; begin < pairs.size(); begin += config_.batch_triplets, ++step) {
    const std::size_t end = std::min(begin + config_.batch_triplets, pairs.size());
    std::vector<BatchEntry> batch;
    std::vector<TripletIndices> triplets;
    batch.reserve(3 * (end - begin));
    for (std::size_t t = begin; t < end; ++t) {
      const auto [item, view] = pairs[t];
      std::size_t other;
      do {
        other = rng.below(data.size());
      } while (other == item);
      const TrainExample& a = data[item];
      const TrainExample& b = data[other];
      const std::size_t base = batch.size();
      batch.push_back({a.item_id, Domain::Offline, a.offlines[view], a.labels});
      batch.push_back({a.item_id, Domain::Online, a.online, a.labels});
      batch.push_back({b.item_id, Domain::Online, b.online, b.labels});
      triplets.push_back({base, base + 1, base + 2});
    }

    Graph g;
    NetworkBinding binding = bind_network(g, net_, true);
    RoutedBatch routed = forward_batch(g, net_, binding, batch);
    LossBreakdown loss = total_loss(g, routed, batch, triplets, config_.ranking, net_.schema());
    g.backward(loss.total);
    history.push_back({epoch, step, loss.total.value().v[0], loss.attribute, loss.ranking});
    apply_update(binding);
  }
  return history;
}

void Trainer::apply_update(const NetworkBinding& binding) {
  std::vector<Param*> params = net_.all_params();
  std::size_t idx = 0;
  for (const auto& net_vars : binding.per_net) {
    for (const Var& v : net_vars) {
      Tensor& w = params[idx]->value;
      Tensor& m = momentum_[idx];
      if (v.grad_live()) {
        const Tensor& grad = v.grad();
        for (std::size_t k = 0; k < w.numel(); ++k) {
          m.v[k] = config_.momentum * m.v[k] - config_.learning_rate * grad.v[k];
          w.v[k] += m.v[k];
        }
      } else {
        // branch an all-missing category left untouched: only momentum decays
        for (std::size_t k = 0; k < w.numel(); ++k) {
          m.v[k] *= config_.momentum;
          w.v[k] += m.v[k];
        }
      }
      ++idx;
    }
  }
}

std::vector<StepRecord> Trainer::train(const std::vector<TrainExample>& data) {
  std::vector<StepRecord> history;
  while (next_epoch_ < config_.epochs) {
    std::vector<StepRecord> part = run_epoch(data);
    history.insert(history.end(), part.begin(), part.end());
  }
  return history;
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ckpt = make_checkpoint(net_);
  std::vector<Param*> params = net_.all_params();
  for (std::size_t i = 0; i < params.size(); ++i)
    ckpt.tensors.add("opt." + params[i]->name, momentum_[i]);
  ckpt.trainer_state = {{"next_epoch", next_epoch_}, {"train_config", config_.to_json()}};
  return ckpt;
}

Trainer Trainer::resume(DualNetwork& net, const Checkpoint& ckpt) {
  check(ckpt.trainer_state.is_object() && ckpt.trainer_state.contains("train_config"),
        ErrorCategory::Validation, "checkpoint carries no trainer state to resume from");
  TrainConfig cfg;
  std::size_t next = 0;
  try {
    cfg = TrainConfig::from_json(ckpt.trainer_state.at("train_config"));
    next = ckpt.trainer_state.at("next_epoch").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::Validation, "bad trainer state in checkpoint: ", e.what());
  }
  Trainer tr(net, cfg);
  std::vector<Param*> params = net.all_params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* slot = ckpt.tensors.find("opt." + params[i]->name);
    check(slot != nullptr, ErrorCategory::Validation, "checkpoint is missing momentum slot opt.",
          params[i]->name);
    check(slot->shape == params[i]->value.shape, ErrorCategory::Validation,
          "momentum slot opt.", params[i]->name, " has shape ", slot->shape_str());
    tr.momentum_[i] = *slot;
  }
  tr.next_epoch_ = next;
  return tr;
}

}  // namespace darn
