#include "sbmhe/serialization.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>

namespace sbmhe {

namespace {

double checked_number(const Json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field + ": expected a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(field + ": value must be finite");
  return v;
}

}  // namespace

double number_from_json(const Json& j, const std::string& field) {
  return checked_number(j, field);
}

Index integer_from_json(const Json& j, const std::string& field) {
  if (!j.is_number_integer()) throw ConfigError(field + ": expected an integer");
  return j.get<Index>();
}

const Json& require_field(const Json& j, const std::string& key, const std::string& parent) {
  if (!j.is_object()) throw ConfigError(parent + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(parent + "." + key + ": missing required field");
  return *it;
}

Vector vector_from_json(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field + ": expected an array of numbers");
  Vector v(static_cast<Index>(j.size()));
  for (Index i = 0; i < v.size(); ++i)
    v[i] = checked_number(j[static_cast<std::size_t>(i)], field + "[" + std::to_string(i) + "]");
  return v;
}

Json vector_to_json(const Vector& v) {
  Json j = Json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

Matrix matrix_from_json(const Json& j, const std::string& field) {
  if (j.is_object()) {
    if (j.contains("diag")) {
      Vector d = vector_from_json(j["diag"], field + ".diag");
      return Matrix(d.asDiagonal());
    }
    if (j.contains("identity")) {
      Index n = integer_from_json(j["identity"], field + ".identity");
      if (n < 0) throw ConfigError(field + ".identity: size must be nonnegative");
      return Matrix::Identity(n, n);
    }
    if (j.contains("scaled_identity")) {
      const Json& s = j["scaled_identity"];
      if (!s.is_array() || s.size() != 2)
        throw ConfigError(field + ".scaled_identity: expected [size, scale]");
      Index n = integer_from_json(s[0], field + ".scaled_identity[0]");
      double c = checked_number(s[1], field + ".scaled_identity[1]");
      if (n < 0) throw ConfigError(field + ".scaled_identity: size must be nonnegative");
      return c * Matrix::Identity(n, n);
    }
    throw ConfigError(field + ": unrecognized matrix shorthand");
  }
  if (!j.is_array() || j.empty())
    throw ConfigError(field + ": expected nested arrays or a shorthand object");
  Index rows = static_cast<Index>(j.size());
  if (!j[0].is_array()) throw ConfigError(field + "[0]: expected an array (matrix row)");
  Index cols = static_cast<Index>(j[0].size());
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    std::string rf = field + "[" + std::to_string(r) + "]";
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      throw ConfigError(rf + ": ragged matrix rows");
    for (Index c = 0; c < cols; ++c)
      m(r, c) = checked_number(row[static_cast<std::size_t>(c)],
                               rf + "[" + std::to_string(c) + "]");
  }
  return m;
}

Json matrix_to_json(const Matrix& m) {
  if (m.rows() == m.cols() && m.isDiagonal(0.0)) {
    Json j;
    j["diag"] = vector_to_json(m.diagonal());
    return j;
  }
  Json j = Json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

Box box_from_json(const Json& j, Index dim, const std::string& field) {
  if (j.is_null()) return Box::unbounded(dim);
  if (!j.is_object()) throw ConfigError(field + ": expected null or an object");
  if (j.contains("radius")) {
    Vector r = vector_from_json(j["radius"], field + ".radius");
    if (r.size() != dim)
      throw ConfigError(field + ".radius: expected " + std::to_string(dim) + " entries");
    if ((r.array() < 0).any()) throw ConfigError(field + ".radius: entries must be nonnegative");
    return Box::symmetric(r);
  }
  if (!j.contains("lower") || !j.contains("upper"))
    throw ConfigError(field + ": expected \"radius\" or \"lower\"/\"upper\"");
  auto side = [&](const char* key, double fill) {
    const Json& s = j[key];
    std::string sf = field + "." + key;
    if (!s.is_array() || static_cast<Index>(s.size()) != dim)
      throw ConfigError(sf + ": expected " + std::to_string(dim) + " entries");
    Vector v(dim);
    for (Index i = 0; i < dim; ++i) {
      const Json& e = s[static_cast<std::size_t>(i)];
      v[i] = e.is_null() ? fill : checked_number(e, sf + "[" + std::to_string(i) + "]");
    }
    return v;
  };
  Vector lo = side("lower", -kInf);
  Vector hi = side("upper", kInf);
  if ((lo.array() > hi.array()).any())
    throw ConfigError(field + ": lower bound exceeds upper bound");
  return Box(lo, hi);
}

Json box_to_json(const Box& box) {
  Json j;
  Json lo = Json::array(), hi = Json::array();
  for (Index i = 0; i < box.dim(); ++i) {
    if (std::isinf(box.lower()[i]))
      lo.push_back(nullptr);
    else
      lo.push_back(box.lower()[i]);
    if (std::isinf(box.upper()[i]))
      hi.push_back(nullptr);
    else
      hi.push_back(box.upper()[i]);
  }
  j["lower"] = lo;
  j["upper"] = hi;
  return j;
}

std::string json_digest(const Json& j) {
  std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

}  // namespace sbmhe
