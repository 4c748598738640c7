#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace anomaly_recon::io {

/// Validates `doc` against a JSON Schema using the keyword subset the shipped
/// schemas rely on: type, properties, required, additionalProperties, items,
/// enum, const, minimum, maximum, exclusiveMinimum, exclusiveMaximum,
/// minItems, maxItems, minLength, and local "$ref" pointers ("#/...").
/// Returns one message per violation, prefixed with the JSON pointer of the
/// offending value; empty means valid.
std::vector<std::string> validate_json(const nlohmann::json& doc, const nlohmann::json& schema);

}  // namespace anomaly_recon::io
