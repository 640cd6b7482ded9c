#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "darn/autodiff.hpp"
#include "darn/schema.hpp"
#include "darn/tensor.hpp"
#include "json.hpp"

namespace darn {

// One convolutional stage: a spatial conv followed by `mlp_layers` 1x1 convs
// (all relu-activated) and an optional max pool.
struct ConvStage {
  std::size_t filters = 16;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  std::size_t mlp_layers = 1;
  int pool_window = 0;  // 0 disables pooling
  int pool_stride = 0;
};

struct SubNetworkConfig {
  std::size_t in_channels = 3;
  std::size_t image_h = 16;
  std::size_t image_w = 16;
  std::vector<ConvStage> stages;
  std::size_t fc1 = 64;
  std::size_t fc2 = 64;
  std::size_t head_hidden = 32;

  // Five 16-filter stages on 16x16 inputs; pools after the first two stages
  // leave the last two stages with 4x4 maps.
  static SubNetworkConfig desk_default();

  void validate() const;

  // Spatial map size after each stage (post-pool).
  std::vector<std::pair<std::size_t, std::size_t>> stage_map_sizes() const;

  nlohmann::json to_json() const;
  static SubNetworkConfig from_json(const nlohmann::json& j);
};

bool operator==(const SubNetworkConfig& a, const SubNetworkConfig& b);

// ---------------------------------------------------------------------------

struct Param {
  std::string name;  // fully qualified, e.g. "shop.conv1.w"
  Tensor value;
};

// Everything one sub-network produces for a batch of images.
struct SubForward {
  Var fc1;                        // [B, fc1]
  Var fc2;                        // [B, fc2]
  Var c4;                         // [B, C, h, w] second-to-last stage output
  Var c5;                         // [B, C, h, w] last stage output
  std::vector<Var> branch_logits; // per category, [B, cardinality]
};

// One tower: conv stages, two fully connected layers, and a tree of
// per-category heads (shared hidden layer per category, then logits).
class SubNetwork {
 public:
  // Parameter initialization draws are seeded per tensor from
  // mix(seed, hash(param name)), so adding or removing a head never shifts
  // any other tensor's draw.
  SubNetwork(std::string prefix, const SubNetworkConfig& config, const AttributeSchema& schema,
             std::uint64_t seed);

  const std::string& prefix() const { return prefix_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  // Registers every parameter as a graph leaf, in params() order.
  std::vector<Var> bind(Graph& g, bool trainable) const;

  // images: [B, in_channels, image_h, image_w]
  SubForward forward(Graph& g, std::span<const Var> bound, Var images) const;

 private:
  const Var& bound_of(std::span<const Var> bound, const std::string& local_name) const;

  std::string prefix_;
  SubNetworkConfig config_;   // owned copy; towers stay valid if moved
  AttributeSchema schema_;
  std::vector<Param> params_;
  std::vector<std::pair<std::string, std::size_t>> index_;  // local name -> params_ slot
};

// ---------------------------------------------------------------------------

// Dual: two structurally identical, independently weighted towers, one per
// domain. Single: one shared tower for both domains (attribute-only and
// shared-weight baselines).
enum class NetworkKind { Dual, Single };

const char* network_kind_name(NetworkKind k);
NetworkKind parse_network_kind(std::string_view name);

class DualNetwork {
 public:
  DualNetwork(NetworkKind kind, SubNetworkConfig config, AttributeSchema schema,
              std::uint64_t seed);

  NetworkKind kind() const { return kind_; }
  const SubNetworkConfig& config() const { return config_; }
  const AttributeSchema& schema() const { return schema_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::size_t net_count() const { return nets_.size(); }
  std::size_t net_index_for(Domain d) const;
  SubNetwork& net(std::size_t i) { return nets_[i]; }
  const SubNetwork& net(std::size_t i) const { return nets_[i]; }

  // Flattened parameter list, towers in order.
  std::vector<Param*> all_params();

  NamedTensors export_params() const;
  void import_params(const NamedTensors& tensors);

 private:
  NetworkKind kind_;
  SubNetworkConfig config_;
  AttributeSchema schema_;
  std::uint64_t init_seed_;
  std::vector<SubNetwork> nets_;
};

// ---------------------------------------------------------------------------
// Batched dual-domain forward.

struct BatchEntry {
  std::string id;
  Domain domain = Domain::Online;
  Tensor image;             // [C, H, W]
  std::vector<int> labels;  // aligned with the schema
};

// Per-graph handle to every bound parameter, aligned with all_params() order.
struct NetworkBinding {
  std::vector<std::vector<Var>> per_net;  // [net index][param index]
};

struct RoutedPart {
  Domain domain = Domain::Online;
  std::size_t net_index = 0;
  SubForward out;
  std::vector<std::size_t> positions;  // original batch positions, in order
};

struct RoutedBatch {
  std::vector<RoutedPart> parts;  // online part first when present
  // batch position -> (part index, row within part)
  std::vector<std::pair<std::size_t, std::size_t>> locate;
};

NetworkBinding bind_network(Graph& g, const DualNetwork& net, bool trainable);

// Groups the batch by domain (preserving order), stacks each group's images
// and runs it through the tower owning that domain. A shared tower is bound
// once, so gradients from both domains accumulate into one parameter set.
RoutedBatch forward_batch(Graph& g, const DualNetwork& net, const NetworkBinding& binding,
                          const std::vector<BatchEntry>& batch);

// ---------------------------------------------------------------------------
// Checkpoints: "DRNC" magic, version, JSON header (kind, config, schema,
// trainer state), then the named tensor block (parameters plus any "opt.*"
// optimizer slots).

struct Checkpoint {
  NetworkKind kind = NetworkKind::Dual;
  SubNetworkConfig config;
  AttributeSchema schema;
  std::uint64_t init_seed = 0;
  nlohmann::json trainer_state;  // object; empty for untrained nets
  NamedTensors tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const DualNetwork& net);
DualNetwork network_from_checkpoint(const Checkpoint& ckpt);

}  // namespace darn
