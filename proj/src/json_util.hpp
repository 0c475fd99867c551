#pragma once

// Strict field-by-field reading of JSON objects into config structs.

#include <functional>
#include <map>
#include <string>

#include <fmt/format.h>

#include "json.hpp"
#include "silencio/errors.hpp"

namespace silencio::detail {

class StrictReader {
 public:
  StrictReader(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw UsageError(fmt::format("{}: expected a JSON object", context_));
  }

  template <class T>
  StrictReader& field(const std::string& key, T& target) {
    handlers_[key] = [this, key, &target](const nlohmann::json& v) {
      try {
        target = v.get<T>();
      } catch (const nlohmann::json::exception& e) {
        throw UsageError(fmt::format("{}: field '{}' has the wrong type ({})", context_, key,
                                     e.what()));
      }
    };
    return *this;
  }

  // Applies every present key; unknown keys are errors naming the key.
  void read() const {
    for (const auto& [key, value] : j_.items()) {
      const auto it = handlers_.find(key);
      if (it == handlers_.end()) {
        throw UsageError(fmt::format("{}: unknown field '{}'", context_, key));
      }
      it->second(value);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::map<std::string, std::function<void(const nlohmann::json&)>> handlers_;
};

}  // namespace silencio::detail
