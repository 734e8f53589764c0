#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "sbmhe/types.hpp"

namespace sbmhe {

using Json = nlohmann::json;

// Raised for malformed or inconsistent configuration input. The message
// always names the offending field path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Vectors serialize as plain arrays: [1.0, 2.0].
Vector vector_from_json(const Json& j, const std::string& field);
Json vector_to_json(const Vector& v);

// Matrices accept several shorthands:
//   [[1,0],[0,1]]                row-major nested arrays
//   {"diag": [1, 2, 3]}          diagonal matrix
//   {"identity": 4}              identity of the given size
//   {"scaled_identity": [4, 2.5]} scale times identity
Matrix matrix_from_json(const Json& j, const std::string& field);
Json matrix_to_json(const Matrix& m);

// Boxes accept:
//   null                               unbounded (dimension from context)
//   {"radius": [a, b]}                 symmetric bounds [-a,a] x [-b,b]
//   {"lower": [...], "upper": [...]}   explicit, null entries mean unbounded
Box box_from_json(const Json& j, Index dim, const std::string& field);
Json box_to_json(const Box& box);

double number_from_json(const Json& j, const std::string& field);
Index integer_from_json(const Json& j, const std::string& field);

// Looks up an entry that must exist.
const Json& require_field(const Json& j, const std::string& key, const std::string& parent);

// Stable 64-bit content hash of the canonical serialization, as lowercase hex.
std::string json_digest(const Json& j);

}  // namespace sbmhe
