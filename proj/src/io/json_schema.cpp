#include "anomaly_recon/io/json_schema.hpp"

#include "anomaly_recon/error.hpp"

namespace anomaly_recon::io {

using nlohmann::json;

namespace {

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "number") return v.is_number();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<std::int64_t>(v.get<double>())));
  throw Error("schema uses unknown type '" + t + "'");
}

class Validator {
 public:
  explicit Validator(const json& root) : root_(root) {}

  void check(const json& v, const json& s, const std::string& at) {
    if (s.is_boolean()) {
      if (!s.get<bool>()) fail(at, "value not allowed");
      return;
    }
    if (s.contains("$ref")) {
      const auto ref = s["$ref"].get<std::string>();
      if (ref.rfind("#", 0) != 0) throw Error("only local schema references are supported: " + ref);
      check(v, root_.at(json::json_pointer(ref.substr(1))), at);
      return;
    }
    if (s.contains("type")) {
      const auto& t = s["type"];
      bool ok = false;
      if (t.is_array()) {
        for (const auto& x : t) ok = ok || has_type(v, x.get<std::string>());
      } else {
        ok = has_type(v, t.get<std::string>());
      }
      if (!ok) {
        fail(at, "expected type " + t.dump() + ", got " + v.type_name());
        return;
      }
    }
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s["enum"]) found = found || e == v;
      if (!found) fail(at, "value " + v.dump() + " not in " + s["enum"].dump());
    }
    if (s.contains("const") && s["const"] != v) fail(at, "value must equal " + s["const"].dump());
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s["minimum"].get<double>()) fail(at, "below minimum " + s["minimum"].dump());
      if (s.contains("maximum") && x > s["maximum"].get<double>()) fail(at, "above maximum " + s["maximum"].dump());
      if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) {
        fail(at, "must exceed " + s["exclusiveMinimum"].dump());
      }
      if (s.contains("exclusiveMaximum") && x >= s["exclusiveMaximum"].get<double>()) {
        fail(at, "must be below " + s["exclusiveMaximum"].dump());
      }
    }
    if (v.is_string() && s.contains("minLength") && v.get<std::string>().size() < s["minLength"].get<std::size_t>()) {
      fail(at, "string shorter than " + s["minLength"].dump());
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
        fail(at, "fewer than " + s["minItems"].dump() + " items");
      }
      if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
        fail(at, "more than " + s["maxItems"].dump() + " items");
      }
      if (s.contains("items")) {
        for (std::size_t n = 0; n < v.size(); ++n) check(v[n], s["items"], at + "/" + std::to_string(n));
      }
    }
    if (v.is_object()) {
      if (s.contains("required")) {
        for (const auto& r : s["required"]) {
          if (!v.contains(r.get<std::string>())) fail(at, "missing required key '" + r.get<std::string>() + "'");
        }
      }
      const json props = s.value("properties", json::object());
      for (const auto& [key, val] : v.items()) {
        const auto child = at + "/" + key;
        if (props.contains(key)) {
          check(val, props[key], child);
        } else if (s.contains("additionalProperties")) {
          check(val, s["additionalProperties"], child);
        }
      }
    }
  }

  std::vector<std::string> errors;

 private:
  void fail(const std::string& at, const std::string& msg) { errors.push_back((at.empty() ? "/" : at) + ": " + msg); }

  const json& root_;
};

}  // namespace

std::vector<std::string> validate_json(const json& doc, const json& schema) {
  Validator v(schema);
  v.check(doc, schema, "");
  return v.errors;
}

}  // namespace anomaly_recon::io
