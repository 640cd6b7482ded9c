#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace darn {

// Which side of the domain gap an image comes from: clean catalog shots
// (online) versus user photos in the wild (offline).
enum class Domain { Online, Offline };

const char* domain_name(Domain d);
Domain parse_domain(std::string_view name);

struct AttributeCategory {
  std::string name;
  std::size_t cardinality = 0;
};

// An ordered list of semantic attribute categories. Label vectors align with
// this order; every network head and loss branch is derived from it.
struct AttributeSchema {
  std::vector<AttributeCategory> categories;

  std::size_t size() const { return categories.size(); }
  std::size_t total_values() const;
  std::size_t index_of(std::string_view name) const;  // throws if absent
  void validate() const;

  nlohmann::json to_json() const;
  static AttributeSchema from_json(const nlohmann::json& j);

  // The full-scale clothing catalog: 9 categories, 179 values in total.
  static AttributeSchema clothing_reference();
};

bool operator==(const AttributeSchema& a, const AttributeSchema& b);

}  // namespace darn
