#include "darn/synth.hpp"

#include <algorithm>
#include <cmath>

#include "darn/autodiff.hpp"
#include "darn/rng.hpp"

namespace darn {

AttributeSchema SynthConfig::default_synth_schema() {
  return AttributeSchema{{{"color", 6}, {"sleeve", 5}, {"pattern", 4}, {"collar", 4}}};
}

void SynthConfig::validate() const {
  schema.validate();
  check(items >= 2, ErrorCategory::Config, "need at least 2 items, got ", items);
  check(image >= 8 && image - 4 >= schema.size(), ErrorCategory::Config, "image size ", image,
        " cannot fit ", schema.size(), " bands");
  check(offline_min >= 1 && offline_min <= offline_max, ErrorCategory::Config,
        "offline view bounds [", offline_min, ",", offline_max, "] are invalid");
  check(missing_rate >= 0.0 && missing_rate < 1.0, ErrorCategory::Config,
        "missing rate must lie in [0,1), got ", missing_rate);
  check(brightness_sigma >= 0.0 && cast_sigma >= 0.0, ErrorCategory::Config,
        "shift sigmas must be non-negative");
  check(clutter_density >= 0.0 && clutter_density <= 1.0, ErrorCategory::Config,
        "clutter density must lie in [0,1], got ", clutter_density);
  check(occlusion_prob >= 0.0 && occlusion_prob <= 1.0, ErrorCategory::Config,
        "occlusion probability must lie in [0,1], got ", occlusion_prob);
  check(jitter_max * 4 < image, ErrorCategory::Config, "jitter ", jitter_max,
        " too large for image size ", image);
  check(contrast_loss >= 0.0 && contrast_loss < 1.0, ErrorCategory::Config,
        "contrast loss must lie in [0,1), got ", contrast_loss);
  check(street_bias >= -1.0 && street_bias <= 1.0, ErrorCategory::Config,
        "street bias must lie in [-1,1], got ", street_bias);
}

nlohmann::json SynthConfig::to_json() const {
  return {{"items", items},
          {"image", image},
          {"offline_min", offline_min},
          {"offline_max", offline_max},
          {"missing_rate", missing_rate},
          {"seed", seed},
          {"schema", schema.to_json()},
          {"brightness_sigma", brightness_sigma},
          {"cast_sigma", cast_sigma},
          {"clutter_density", clutter_density},
          {"occlusion_prob", occlusion_prob},
          {"jitter_max", jitter_max},
          {"contrast_loss", contrast_loss},
          {"street_bias", street_bias}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig cfg;
  cfg.items = j.value("items", cfg.items);
  cfg.image = j.value("image", cfg.image);
  cfg.offline_min = j.value("offline_min", cfg.offline_min);
  cfg.offline_max = j.value("offline_max", cfg.offline_max);
  cfg.missing_rate = j.value("missing_rate", cfg.missing_rate);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("schema")) cfg.schema = AttributeSchema::from_json(j.at("schema"));
  cfg.brightness_sigma = j.value("brightness_sigma", cfg.brightness_sigma);
  cfg.cast_sigma = j.value("cast_sigma", cfg.cast_sigma);
  cfg.clutter_density = j.value("clutter_density", cfg.clutter_density);
  cfg.occlusion_prob = j.value("occlusion_prob", cfg.occlusion_prob);
  cfg.jitter_max = j.value("jitter_max", cfg.jitter_max);
  cfg.contrast_loss = j.value("contrast_loss", cfg.contrast_loss);
  cfg.street_bias = j.value("street_bias", cfg.street_bias);
  cfg.validate();
  return cfg;
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h -= std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (int(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  rgb[0] = r + m, rgb[1] = g + m, rgb[2] = b + m;
}

namespace {

constexpr double kBackground = 0.85;

struct Painter {
  std::size_t H, W;

  Tensor blank() const { return Tensor::full({3, H, W}, kBackground); }

  static void put(Tensor& img, std::size_t y, std::size_t x, const double rgb[3]) {
    const std::size_t hw = img.dim(1) * img.dim(2);
    for (std::size_t c = 0; c < 3; ++c) img.v[c * hw + y * img.dim(2) + x] = rgb[c];
  }

  void rect(Tensor& img, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1,
            const double rgb[3]) const {
    for (std::size_t y = y0; y < std::min(y1, H); ++y)
      for (std::size_t x = x0; x < std::min(x1, W); ++x) put(img, y, x, rgb);
  }
};

// The clean shop-side rendering: one hue-coded striped band per category,
// plus a small per-item tint so identical attribute vectors stay separable.
Tensor render_clean(const Painter& p, const AttributeSchema& schema,
                    const std::vector<int>& values, const double tint[3]) {
  Tensor img = p.blank();
  const std::size_t top = 2, bottom = p.H - 2, left = 2, right = p.W - 2;
  const std::size_t rows = bottom - top;
  const std::size_t nc = schema.size();
  for (std::size_t c = 0; c < nc; ++c) {
    const int v = values[c];
    const double hue = (double(v) + 0.5) / double(schema.categories[c].cardinality) +
                       double(c) * 0.381966;  // golden-ratio offset per band
    double rgb[3];
    hsv_to_rgb(hue, 0.65, 0.8, rgb);
    double dark[3];
    for (std::size_t k = 0; k < 3; ++k) {
      rgb[k] = std::clamp(rgb[k] + tint[k], 0.0, 1.0);
      dark[k] = rgb[k] * 0.45;
    }
    const std::size_t y0 = top + c * rows / nc;
    const std::size_t y1 = top + (c + 1) * rows / nc;
    const std::size_t period = 1 + std::size_t(v) % 3;
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = left; x < right; ++x)
        Painter::put(img, y, x, ((x - left) / period) % 2 ? dark : rgb);
  }
  return img;
}

// Street-side nuisances: geometric jitter, background clutter, an occasional
// occluding patch, then a fixed exposure transform plus per-image brightness
// and per-channel cast.  With every knob at zero the output is bit-identical
// to the clean rendering.
Tensor render_street(const Painter& p, const SynthConfig& cfg, const Tensor& clean, Rng& rng) {
  const std::size_t H = p.H, W = p.W;
  const std::size_t span = 2 * cfg.jitter_max + 1;
  const long dy = long(rng.below(span)) - long(cfg.jitter_max);
  const long dx = long(rng.below(span)) - long(cfg.jitter_max);
  Tensor img = p.blank();
  const std::size_t hw = H * W;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const long sy = long(y) - dy, sx = long(x) - dx;
        if (sy < 0 || sx < 0 || sy >= long(H) || sx >= long(W)) continue;
        img.v[c * hw + y * W + x] = clean.v[c * hw + std::size_t(sy) * W + std::size_t(sx)];
      }

  const std::size_t n_clutter = std::size_t(std::lround(4.0 * cfg.clutter_density));
  for (std::size_t i = 0; i < n_clutter; ++i) {
    double rgb[3];
    hsv_to_rgb(rng.uniform(), 0.5, 0.4 + 0.5 * rng.uniform(), rgb);
    const std::size_t h = 2 + rng.below(3), w = 2 + rng.below(3);
    const std::size_t y = rng.below(H - h), x = rng.below(W - w);
    p.rect(img, y, y + h, x, x + w, rgb);
  }
  if (rng.uniform() < cfg.occlusion_prob) {
    const double gray[3] = {0.15, 0.15, 0.15};
    const std::size_t h = 3 + rng.below(3), w = 3 + rng.below(3);
    const std::size_t y = 2 + rng.below(H - h - 2), x = 2 + rng.below(W - w - 2);
    p.rect(img, y, y + h, x, x + w, gray);
  }

  const double brightness = cfg.brightness_sigma * rng.normal();
  const double gain = 1.0 - cfg.contrast_loss;
  double cast[3];
  for (double& c : cast) c = 1.0 + cfg.cast_sigma * (2.0 * rng.uniform() - 1.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) {
      double& d = img.v[c * hw + i];
      d = std::clamp(d * gain * cast[c] + cfg.street_bias + brightness, 0.0, 1.0);
    }
  return img;
}

}  // namespace

// Catalogs repeat coarse attribute combinations across many items, so
// attribute recognition alone cannot settle exact-match retrieval.  Combos
// recur from a small pool of styles; within a style only the per-item tint
// tells items apart.
constexpr std::size_t kStylePool = 10;

Dataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t nc = cfg.schema.size();
  Painter p{cfg.image, cfg.image};
  Rng master(Rng::mix(cfg.seed, 0xda7a5e7));

  std::vector<std::vector<int>> styles(kStylePool, std::vector<int>(nc));
  for (auto& style : styles)
    for (std::size_t c = 0; c < nc; ++c)
      style[c] = int(master.below(cfg.schema.categories[c].cardinality));

  Dataset ds;
  ds.schema = cfg.schema;
  char id[32];
  for (std::size_t i = 0; i < cfg.items; ++i) {
    std::snprintf(id, sizeof id, "item-%04zu", i);
    TrainExample ex;
    ex.item_id = id;

    const std::vector<int>& values = styles[master.below(styles.size())];
    ex.labels = values;
    bool any = false;
    for (std::size_t c = 0; c < nc; ++c) {
      if (master.uniform() < cfg.missing_rate) ex.labels[c] = kMissingLabel;
      any = any || ex.labels[c] != kMissingLabel;
    }
    if (!any) ex.labels[i % nc] = values[i % nc];  // keep at least one label

    Rng item_rng(Rng::mix(Rng::mix(cfg.seed, 0x17e21), i));
    double tint[3];
    for (double& t : tint) t = 0.16 * item_rng.uniform() - 0.08;
    ex.online = render_clean(p, cfg.schema, values, tint);
    const std::size_t n_views =
        cfg.offline_min + item_rng.below(cfg.offline_max - cfg.offline_min + 1);
    for (std::size_t k = 0; k < n_views; ++k)
      ex.offlines.push_back(render_street(p, cfg, ex.online, item_rng));
    ds.items.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace darn
