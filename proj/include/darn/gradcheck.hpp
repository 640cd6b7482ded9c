#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "darn/autodiff.hpp"
#include "nlohmann/json.hpp"

namespace darn {

struct AuditEntry {
  std::string name;
  GradCheckReport report;
};

// Central-difference audit of every differentiable primitive plus the full
// training loss on the desk-scale dual network.  Deterministic per seed.
struct GradAudit {
  std::vector<AuditEntry> entries;

  double max_rel_error() const;
  std::size_t coords_checked() const;
  const AuditEntry& worst() const;  // entries must be non-empty
  nlohmann::json to_json() const;
};

GradAudit run_gradient_audit(std::uint64_t seed = 0);

}  // namespace darn
