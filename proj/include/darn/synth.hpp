#pragma once

#include <cstdint>

#include "darn/data.hpp"
#include "nlohmann/json.hpp"

namespace darn {

// Renderer for the synthetic catalog.  Each item is a "garment" of stacked
// horizontal bands, one band per attribute category; the band's hue encodes
// the attribute value and its stripe period adds a texture cue.  The online
// (shop) side is the clean rendering; offline (street) views add jitter,
// brightness shifts, colour casts, clutter and occlusion.
struct SynthConfig {
  std::size_t items = 500;
  std::size_t image = 16;       // square canvas, needs 4 + one row per category
  std::size_t offline_min = 1;  // street views per item
  std::size_t offline_max = 1;
  double missing_rate = 0.1;    // chance an attribute label is withheld
  std::uint64_t seed = 0;
  AttributeSchema schema = default_synth_schema();

  // Domain-shift knobs; all zero makes street views bit-identical to the
  // shop rendering.  The sigma knobs vary per image; contrast_loss and
  // street_bias are a fixed exposure transform shared by every street photo,
  // the part of the gap a domain-specific tower can absorb outright.
  double brightness_sigma = 0.15;
  double cast_sigma = 0.2;       // per-channel multiplicative spread
  double clutter_density = 0.6;  // scales the background rectangle count
  double occlusion_prob = 0.5;
  std::size_t jitter_max = 2;    // max |shift| in pixels, must stay < image/4
  double contrast_loss = 0.0;    // street pixels scaled by (1 - contrast_loss)
  double street_bias = 0.0;      // constant lift added to every street channel

  static AttributeSchema default_synth_schema();
  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);  // absent keys keep defaults
};

// (h,s,v) in [0,1] to rgb; h wraps.
void hsv_to_rgb(double h, double s, double v, double rgb[3]);

Dataset generate_synthetic(const SynthConfig& cfg);

}  // namespace darn
