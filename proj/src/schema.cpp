#include "darn/schema.hpp"

#include <set>

#include "darn/error.hpp"

namespace darn {

const char* domain_name(Domain d) { return d == Domain::Online ? "online" : "offline"; }

Domain parse_domain(std::string_view name) {
  if (name == "online") return Domain::Online;
  if (name == "offline") return Domain::Offline;
  fail(ErrorCategory::Validation, "unknown domain '", std::string(name),
       "', expected online or offline");
}

std::size_t AttributeSchema::total_values() const {
  std::size_t total = 0;
  for (const auto& c : categories) total += c.cardinality;
  return total;
}

std::size_t AttributeSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (categories[i].name == name) return i;
  fail(ErrorCategory::Validation, "no attribute category named '", std::string(name), "'");
}

void AttributeSchema::validate() const {
  check(!categories.empty(), ErrorCategory::Validation, "schema has no categories");
  std::set<std::string> seen;
  for (const auto& c : categories) {
    check(!c.name.empty(), ErrorCategory::Validation, "schema category with empty name");
    check(c.cardinality >= 2, ErrorCategory::Validation, "category '", c.name,
          "' needs at least 2 values, got ", c.cardinality);
    check(seen.insert(c.name).second, ErrorCategory::Validation, "duplicate category '", c.name,
          "'");
  }
}

nlohmann::json AttributeSchema::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : categories) j.push_back({{"name", c.name}, {"values", c.cardinality}});
  return j;
}

AttributeSchema AttributeSchema::from_json(const nlohmann::json& j) {
  check(j.is_array(), ErrorCategory::Validation, "schema json must be an array");
  AttributeSchema s;
  for (const auto& e : j) {
    check(e.is_object() && e.contains("name") && e.contains("values"),
          ErrorCategory::Validation, "schema entry needs name and values");
    s.categories.push_back({e.at("name").get<std::string>(), e.at("values").get<std::size_t>()});
  }
  s.validate();
  return s;
}

AttributeSchema AttributeSchema::clothing_reference() {
  return AttributeSchema{{
      {"clothes_button", 12},
      {"clothes_category", 20},
      {"clothes_color", 56},
      {"clothes_length", 6},
      {"clothes_pattern", 27},
      {"clothes_shape", 10},
      {"collar_shape", 25},
      {"sleeve_length", 7},
      {"sleeve_shape", 16},
  }};
}

bool operator==(const AttributeSchema& a, const AttributeSchema& b) {
  if (a.categories.size() != b.categories.size()) return false;
  for (std::size_t i = 0; i < a.categories.size(); ++i)
    if (a.categories[i].name != b.categories[i].name ||
        a.categories[i].cardinality != b.categories[i].cardinality)
      return false;
  return true;
}

}  // namespace darn
