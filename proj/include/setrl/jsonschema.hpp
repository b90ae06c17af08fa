#pragma once

#include <string>
#include <vector>

#include <json.hpp>

// Validation against the subset of JSON Schema used by the schemas shipped
// in schemas/: type, required, properties, items, enum, additionalProperties.

namespace setrl {

using Json = nlohmann::json;

namespace detail {

inline bool type_matches(const Json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "number") return value.is_number();
  if (type == "integer") return value.is_number_integer();
  if (type == "boolean") return value.is_boolean();
  if (type == "null") return value.is_null();
  return false;
}

inline void validate_node(const Json& value, const Json& schema, const std::string& path,
                          std::vector<std::string>& errors) {
  if (schema.contains("type")) {
    const auto& t = schema["type"];
    bool ok = false;
    if (t.is_array()) {
      for (const auto& opt : t) ok = ok || type_matches(value, opt.get<std::string>());
    } else {
      ok = type_matches(value, t.get<std::string>());
    }
    if (!ok) {
      errors.push_back(path + ": expected type " + t.dump());
      return;
    }
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& opt : schema["enum"]) ok = ok || opt == value;
    if (!ok) errors.push_back(path + ": value " + value.dump() + " not in enum");
  }
  if (value.is_object()) {
    if (schema.contains("required"))
      for (const auto& key : schema["required"])
        if (!value.contains(key.get<std::string>()))
          errors.push_back(path + ": missing required key '" + key.get<std::string>() + "'");
    const Json props = schema.value("properties", Json::object());
    for (const auto& [key, sub] : value.items()) {
      if (props.contains(key)) {
        validate_node(sub, props[key], path + "/" + key, errors);
      } else if (schema.contains("additionalProperties") &&
                 schema["additionalProperties"].is_boolean() &&
                 !schema["additionalProperties"].get<bool>()) {
        errors.push_back(path + ": unexpected key '" + key + "'");
      }
    }
  }
  if (value.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < value.size(); ++i)
      validate_node(value[i], schema["items"], path + "/" + std::to_string(i), errors);
  }
}

}  // namespace detail

inline std::vector<std::string> validate_against_schema(const Json& value, const Json& schema) {
  std::vector<std::string> errors;
  detail::validate_node(value, schema, "#", errors);
  return errors;
}

}  // namespace setrl
