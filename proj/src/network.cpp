#include "darn/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "darn/rng.hpp"

namespace darn {

SubNetworkConfig SubNetworkConfig::desk_default() {
  SubNetworkConfig cfg;
  cfg.stages = {
      {16, 3, 1, 1, 1, 2, 2},
      {16, 3, 1, 1, 1, 2, 2},
      {16, 3, 1, 1, 1, 0, 0},
      {16, 3, 1, 1, 2, 0, 0},
      {16, 3, 1, 1, 1, 0, 0},
  };
  return cfg;
}

void SubNetworkConfig::validate() const {
  check(in_channels > 0 && image_h > 0 && image_w > 0, ErrorCategory::Config,
        "image dimensions must be positive");
  check(stages.size() >= 2, ErrorCategory::Config,
        "need at least two conv stages for the two ranking feature maps, got ", stages.size());
  check(fc1 > 0 && fc2 > 0 && head_hidden > 0, ErrorCategory::Config,
        "fully connected widths must be positive");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const ConvStage& s = stages[i];
    check(s.filters > 0, ErrorCategory::Config, "stage ", i + 1, ": filters must be positive");
    check(s.kernel >= 1 && s.stride >= 1 && s.pad >= 0, ErrorCategory::Config, "stage ", i + 1,
          ": invalid kernel/stride/pad");
    check((s.pool_window == 0) == (s.pool_stride == 0), ErrorCategory::Config, "stage ", i + 1,
          ": pool window and stride must be set together");
  }
  stage_map_sizes();  // throws when any map collapses
}

std::vector<std::pair<std::size_t, std::size_t>> SubNetworkConfig::stage_map_sizes() const {
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  std::size_t h = image_h, w = image_w;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const ConvStage& s = stages[i];
    auto conv_out = [&](std::size_t extent) -> std::size_t {
      const std::size_t padded = extent + 2 * std::size_t(s.pad);
      check(std::size_t(s.kernel) <= padded, ErrorCategory::Config, "stage ", i + 1, ": kernel ",
            s.kernel, " exceeds padded extent ", padded);
      return (padded - s.kernel) / s.stride + 1;
    };
    h = conv_out(h);
    w = conv_out(w);
    if (s.pool_window > 0) {
      check(std::size_t(s.pool_window) <= h && std::size_t(s.pool_window) <= w,
            ErrorCategory::Config, "stage ", i + 1, ": pool window ", s.pool_window,
            " exceeds map ", h, "x", w);
      h = (h - s.pool_window) / s.pool_stride + 1;
      w = (w - s.pool_window) / s.pool_stride + 1;
    }
    check(h > 0 && w > 0, ErrorCategory::Config, "stage ", i + 1, ": map collapsed to zero");
    sizes.emplace_back(h, w);
  }
  return sizes;
}

nlohmann::json SubNetworkConfig::to_json() const {
  nlohmann::json stage_arr = nlohmann::json::array();
  for (const ConvStage& s : stages)
    stage_arr.push_back({{"filters", s.filters},
                         {"kernel", s.kernel},
                         {"stride", s.stride},
                         {"pad", s.pad},
                         {"mlp_layers", s.mlp_layers},
                         {"pool_window", s.pool_window},
                         {"pool_stride", s.pool_stride}});
  return {{"in_channels", in_channels}, {"image_h", image_h},       {"image_w", image_w},
          {"stages", stage_arr},        {"fc1", fc1},               {"fc2", fc2},
          {"head_hidden", head_hidden}};
}

SubNetworkConfig SubNetworkConfig::from_json(const nlohmann::json& j) {
  SubNetworkConfig cfg;
  cfg.stages.clear();
  cfg.in_channels = j.at("in_channels").get<std::size_t>();
  cfg.image_h = j.at("image_h").get<std::size_t>();
  cfg.image_w = j.at("image_w").get<std::size_t>();
  cfg.fc1 = j.at("fc1").get<std::size_t>();
  cfg.fc2 = j.at("fc2").get<std::size_t>();
  cfg.head_hidden = j.at("head_hidden").get<std::size_t>();
  for (const auto& e : j.at("stages")) {
    ConvStage s;
    s.filters = e.at("filters").get<std::size_t>();
    s.kernel = e.at("kernel").get<int>();
    s.stride = e.at("stride").get<int>();
    s.pad = e.at("pad").get<int>();
    s.mlp_layers = e.at("mlp_layers").get<std::size_t>();
    s.pool_window = e.at("pool_window").get<int>();
    s.pool_stride = e.at("pool_stride").get<int>();
    cfg.stages.push_back(s);
  }
  cfg.validate();
  return cfg;
}

bool operator==(const SubNetworkConfig& a, const SubNetworkConfig& b) {
  return a.to_json() == b.to_json();
}

// ---------------------------------------------------------------------------

namespace {

Tensor init_weight(std::vector<std::size_t> shape, std::size_t fan_in, const std::string& name,
                   std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(Rng::mix(seed, Rng::hash_str(name)));
  // sqrt(2/fan_in) keeps activation variance roughly constant through the
  // relu stack; plain 1/sqrt(fan_in) collapses the deep tower's outputs to
  // ~1e-3, which stalls both loss terms at their initial values.
  const double stddev = std::sqrt(2.0 / double(fan_in));
  for (double& d : t.v) d = stddev * rng.normal();
  return t;
}

}  // namespace

SubNetwork::SubNetwork(std::string prefix, const SubNetworkConfig& config,
                       const AttributeSchema& schema, std::uint64_t seed)
    : prefix_(std::move(prefix)), config_(config), schema_(schema) {
  config_.validate();
  schema_.validate();

  auto add_weight = [&](const std::string& local, std::vector<std::size_t> shape,
                        std::size_t fan_in) {
    std::string full = prefix_ + local;
    index_.emplace_back(local, params_.size());
    params_.push_back({full, init_weight(std::move(shape), fan_in, full, seed)});
  };
  auto add_bias = [&](const std::string& local, std::size_t width) {
    index_.emplace_back(local, params_.size());
    params_.push_back({prefix_ + local, Tensor::zeros({width})});
  };

  std::size_t channels = config_.in_channels;
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const ConvStage& stage = config_.stages[s];
    const std::string base = "conv" + std::to_string(s + 1);
    const std::size_t k = std::size_t(stage.kernel);
    add_weight(base + ".w", {stage.filters, channels, k, k}, channels * k * k);
    add_bias(base + ".b", stage.filters);
    for (std::size_t m = 0; m < stage.mlp_layers; ++m) {
      const std::string mbase = base + ".mlp" + std::to_string(m + 1);
      add_weight(mbase + ".w", {stage.filters, stage.filters, 1, 1}, stage.filters);
      add_bias(mbase + ".b", stage.filters);
    }
    channels = stage.filters;
  }

  const auto maps = config_.stage_map_sizes();
  const auto [lh, lw] = maps.back();
  const std::size_t flat = channels * lh * lw;
  add_weight("fc1.w", {flat, config_.fc1}, flat);
  add_bias("fc1.b", config_.fc1);
  add_weight("fc2.w", {config_.fc1, config_.fc2}, config_.fc1);
  add_bias("fc2.b", config_.fc2);

  for (const AttributeCategory& cat : schema_.categories) {
    const std::string base = "head." + cat.name;
    add_weight(base + ".hidden.w", {config_.fc2, config_.head_hidden}, config_.fc2);
    add_bias(base + ".hidden.b", config_.head_hidden);
    add_weight(base + ".out.w", {config_.head_hidden, cat.cardinality}, config_.head_hidden);
    add_bias(base + ".out.b", cat.cardinality);
  }
}

std::vector<Var> SubNetwork::bind(Graph& g, bool trainable) const {
  std::vector<Var> bound;
  bound.reserve(params_.size());
  for (const Param& p : params_) bound.push_back(g.leaf(p.value, trainable));
  return bound;
}

const Var& SubNetwork::bound_of(std::span<const Var> bound, const std::string& local_name) const {
  for (const auto& [name, slot] : index_)
    if (name == local_name) {
      check(slot < bound.size(), ErrorCategory::Contract, "binding shorter than parameter list");
      return bound[slot];
    }
  fail(ErrorCategory::Contract, "no parameter named ", prefix_, local_name);
}

SubForward SubNetwork::forward(Graph& g, std::span<const Var> bound, Var images) const {
  check(bound.size() == params_.size(), ErrorCategory::Contract, "binding has ", bound.size(),
        " vars for ", params_.size(), " parameters");
  const Tensor& im = images.value();
  check(im.ndim() == 4 && im.dim(1) == config_.in_channels && im.dim(2) == config_.image_h &&
            im.dim(3) == config_.image_w,
        ErrorCategory::Dimension, "images must be [B,", config_.in_channels, ",",
        config_.image_h, ",", config_.image_w, "], got ", im.shape_str());

  Var x = images;
  std::vector<Var> stage_outputs;
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const ConvStage& stage = config_.stages[s];
    const std::string base = "conv" + std::to_string(s + 1);
    x = g.relu(g.conv2d(x, bound_of(bound, base + ".w"), bound_of(bound, base + ".b"),
                        stage.stride, stage.pad));
    for (std::size_t m = 0; m < stage.mlp_layers; ++m) {
      const std::string mbase = base + ".mlp" + std::to_string(m + 1);
      x = g.relu(g.conv2d(x, bound_of(bound, mbase + ".w"), bound_of(bound, mbase + ".b"), 1, 0));
    }
    if (stage.pool_window > 0) x = g.maxpool(x, stage.pool_window, stage.pool_stride);
    stage_outputs.push_back(x);
  }

  SubForward out;
  out.c4 = stage_outputs[stage_outputs.size() - 2];
  out.c5 = stage_outputs.back();
  out.fc1 = g.relu(g.fully_connected(g.flatten(out.c5), bound_of(bound, "fc1.w"),
                                     bound_of(bound, "fc1.b")));
  out.fc2 = g.relu(g.fully_connected(out.fc1, bound_of(bound, "fc2.w"),
                                     bound_of(bound, "fc2.b")));
  for (const AttributeCategory& cat : schema_.categories) {
    const std::string base = "head." + cat.name;
    Var hidden = g.relu(g.fully_connected(out.fc2, bound_of(bound, base + ".hidden.w"),
                                          bound_of(bound, base + ".hidden.b")));
    out.branch_logits.push_back(g.fully_connected(hidden, bound_of(bound, base + ".out.w"),
                                                  bound_of(bound, base + ".out.b")));
  }
  return out;
}

// ---------------------------------------------------------------------------

const char* network_kind_name(NetworkKind k) {
  return k == NetworkKind::Dual ? "dual" : "single";
}

NetworkKind parse_network_kind(std::string_view name) {
  if (name == "dual") return NetworkKind::Dual;
  if (name == "single") return NetworkKind::Single;
  fail(ErrorCategory::Validation, "unknown network kind '", std::string(name),
       "', expected dual or single");
}

DualNetwork::DualNetwork(NetworkKind kind, SubNetworkConfig config, AttributeSchema schema,
                         std::uint64_t seed)
    : kind_(kind), config_(std::move(config)), schema_(std::move(schema)), init_seed_(seed) {
  if (kind_ == NetworkKind::Dual) {
    nets_.emplace_back("shop.", config_, schema_, seed);
    nets_.emplace_back("street.", config_, schema_, seed);
  } else {
    nets_.emplace_back("net.", config_, schema_, seed);
  }
}

std::size_t DualNetwork::net_index_for(Domain d) const {
  if (kind_ == NetworkKind::Single) return 0;
  return d == Domain::Online ? 0 : 1;
}

std::vector<Param*> DualNetwork::all_params() {
  std::vector<Param*> out;
  for (SubNetwork& n : nets_)
    for (Param& p : n.params()) out.push_back(&p);
  return out;
}

NamedTensors DualNetwork::export_params() const {
  NamedTensors nt;
  for (const SubNetwork& n : nets_)
    for (const Param& p : n.params()) nt.add(p.name, p.value);
  return nt;
}

void DualNetwork::import_params(const NamedTensors& tensors) {
  for (SubNetwork& n : nets_)
    for (Param& p : n.params()) {
      const Tensor* t = tensors.find(p.name);
      check(t != nullptr, ErrorCategory::Validation, "checkpoint is missing tensor ", p.name);
      check(t->shape == p.value.shape, ErrorCategory::Validation, "tensor ", p.name,
            " has shape ", t->shape_str(), ", expected ", p.value.shape_str());
      p.value = *t;
    }
}

// ---------------------------------------------------------------------------

NetworkBinding bind_network(Graph& g, const DualNetwork& net, bool trainable) {
  NetworkBinding binding;
  for (std::size_t i = 0; i < net.net_count(); ++i)
    binding.per_net.push_back(net.net(i).bind(g, trainable));
  return binding;
}

RoutedBatch forward_batch(Graph& g, const DualNetwork& net, const NetworkBinding& binding,
                          const std::vector<BatchEntry>& batch) {
  check(!batch.empty(), ErrorCategory::Contract, "forward_batch on an empty batch");
  check(binding.per_net.size() == net.net_count(), ErrorCategory::Contract,
        "binding does not match network");

  RoutedBatch routed;
  routed.locate.assign(batch.size(), {0, 0});
  for (Domain domain : {Domain::Online, Domain::Offline}) {
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (batch[i].domain == domain) positions.push_back(i);
    if (positions.empty()) continue;

    std::vector<Tensor> images;
    images.reserve(positions.size());
    for (std::size_t pos : positions) {
      const Tensor& im = batch[pos].image;
      check(im.ndim() == 3, ErrorCategory::Dimension, "batch entry ", batch[pos].id,
            ": image must be [C,H,W], got ", im.shape_str());
      images.push_back(im);
    }
    Var stacked = g.leaf(stack(images));

    RoutedPart part;
    part.domain = domain;
    part.net_index = net.net_index_for(domain);
    part.out = net.net(part.net_index).forward(g, binding.per_net[part.net_index], stacked);
    part.positions = std::move(positions);
    for (std::size_t row = 0; row < part.positions.size(); ++row)
      routed.locate[part.positions[row]] = {routed.parts.size(), row};
    routed.parts.push_back(std::move(part));
  }
  return routed;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'D', 'R', 'N', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32_le(std::ostream& os, std::uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  check(bool(is), ErrorCategory::Io, "truncated checkpoint");
  std::uint32_t x = 0;
  for (int i = 3; i >= 0; --i) x = (x << 8) | b[i];
  return x;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header{{"kind", network_kind_name(ckpt.kind)},
                        {"config", ckpt.config.to_json()},
                        {"schema", ckpt.schema.to_json()},
                        {"init_seed", ckpt.init_seed},
                        {"trainer", ckpt.trainer_state.is_null() ? nlohmann::json::object()
                                                                 : ckpt.trainer_state}};
  const std::string header_bytes = header.dump();

  std::ofstream os(path, std::ios::binary);
  check(bool(os), ErrorCategory::Io, "cannot open for writing: ", path.string());
  os.write(kCheckpointMagic, 4);
  put_u32_le(os, kCheckpointVersion);
  put_u32_le(os, static_cast<std::uint32_t>(header_bytes.size()));
  os.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  write_named_tensors(os, ckpt.tensors);
  check(bool(os), ErrorCategory::Io, "checkpoint write failed: ", path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), ErrorCategory::Io, "cannot open checkpoint: ", path.string());
  char magic[4];
  is.read(magic, 4);
  check(bool(is) && std::equal(magic, magic + 4, kCheckpointMagic), ErrorCategory::Io,
        "not a checkpoint file: ", path.string());
  const std::uint32_t version = get_u32_le(is);
  check(version == kCheckpointVersion, ErrorCategory::Io, "unsupported checkpoint version ",
        version);
  const std::uint32_t header_len = get_u32_le(is);
  std::string header_bytes(header_len, '\0');
  is.read(header_bytes.data(), header_len);
  check(bool(is), ErrorCategory::Io, "truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::Io, "corrupt checkpoint header: ", e.what());
  }

  Checkpoint ckpt;
  ckpt.kind = parse_network_kind(header.at("kind").get<std::string>());
  ckpt.config = SubNetworkConfig::from_json(header.at("config"));
  ckpt.schema = AttributeSchema::from_json(header.at("schema"));
  ckpt.init_seed = header.value("init_seed", std::uint64_t{0});
  ckpt.trainer_state = header.value("trainer", nlohmann::json::object());
  ckpt.tensors = read_named_tensors(is);
  return ckpt;
}

Checkpoint make_checkpoint(const DualNetwork& net) {
  Checkpoint ckpt;
  ckpt.kind = net.kind();
  ckpt.config = net.config();
  ckpt.schema = net.schema();
  ckpt.init_seed = net.init_seed();
  ckpt.trainer_state = nlohmann::json::object();
  ckpt.tensors = net.export_params();
  return ckpt;
}

DualNetwork network_from_checkpoint(const Checkpoint& ckpt) {
  DualNetwork net(ckpt.kind, ckpt.config, ckpt.schema, ckpt.init_seed);
  net.import_params(ckpt.tensors);
  return net;
}

}  // namespace darn
