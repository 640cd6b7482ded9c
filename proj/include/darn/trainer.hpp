#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "darn/data.hpp"
#include "darn/losses.hpp"
#include "darn/network.hpp"

namespace darn {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_triplets = 16;  // triplets per step; batch holds 3x rows
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  RankingConfig ranking;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // within the epoch
  double total = 0.0;
  double attribute = 0.0;
  double ranking = 0.0;
};

void write_history_csv(std::ostream& os, const std::vector<StepRecord>& history);

// Minibatch SGD with momentum over the combined attribute + ranking
// objective.  Every source of randomness is derived from (seed, epoch), so a
// snapshot taken between epochs resumes bit-exactly.
class Trainer {
 public:
  Trainer(DualNetwork& net, TrainConfig config);

  // One full pass: anchor/positive pairs in item order, shuffled, negatives
  // drawn by rejection from the other items.  Loss is recorded before the
  // parameter update.
  std::vector<StepRecord> run_epoch(const std::vector<TrainExample>& data);

  // Runs epochs [next_epoch, config.epochs); concatenated step records.
  std::vector<StepRecord> train(const std::vector<TrainExample>& data);

  std::size_t next_epoch() const { return next_epoch_; }
  const TrainConfig& config() const { return config_; }
  void set_epochs(std::size_t epochs) { config_.epochs = epochs; }

  // Parameters, "opt.*" momentum slots, and progress in one checkpoint.
  Checkpoint snapshot() const;
  // Picks up momentum and progress from a snapshot; the network itself must
  // already carry the checkpoint's parameters.
  static Trainer resume(DualNetwork& net, const Checkpoint& ckpt);

 private:
  void apply_update(const NetworkBinding& binding);

  DualNetwork& net_;
  TrainConfig config_;
  std::vector<Tensor> momentum_;  // aligned with net_.all_params()
  std::size_t next_epoch_ = 0;
};

}  // namespace darn
