#pragma once

#include <json.hpp>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ipose/error.hpp"

namespace ipose::detail {

using json = nlohmann::json;

inline json parse_json(std::string_view text, const std::string& context) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(context + ": invalid JSON: " + e.what());
  }
}

/// Reads fields of a JSON object with type checks and rejects keys that
/// were never read once finish() is called.
class FieldReader {
 public:
  FieldReader(const json& object, std::string context)
      : object_(object), context_(std::move(context)) {
    if (!object_.is_object()) throw ConfigError(context_ + ": expected an object");
  }

  bool has(const char* key) const { return object_.contains(key); }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!object_.contains(key)) return;
    out = convert<T>(object_.at(key), key);
  }

  template <typename T>
  T require(const char* key) {
    seen_.insert(key);
    if (!object_.contains(key)) throw ConfigError(context_ + ": missing required key '" + key + "'");
    return convert<T>(object_.at(key), key);
  }

  const json& raw(const char* key) {
    seen_.insert(key);
    if (!object_.contains(key)) throw ConfigError(context_ + ": missing required key '" + key + "'");
    return object_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      if (!seen_.count(key)) throw ConfigError(context_ + ": unknown key '" + key + "'");
    }
  }

  const std::string& context() const { return context_; }

 private:
  template <typename T>
  T convert(const json& v, const char* key) const {
    const std::string where = context_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (!v.is_array()) throw ConfigError(where + ": expected an array of strings");
      std::vector<std::string> out;
      for (const auto& e : v) {
        if (!e.is_string()) throw ConfigError(where + ": expected an array of strings");
        out.push_back(e.get<std::string>());
      }
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

  const json& object_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace ipose::detail
