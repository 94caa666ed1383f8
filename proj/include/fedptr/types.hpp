#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedptr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Contiguous slice of a flat parameter vector belonging to one layer.
struct LayerSpan {
  std::string id;
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
};

using LayerMap = std::vector<LayerSpan>;

// Flat model-parameter vector plus the layer map that partitions it.
// Layer-adaptive regularization and trajectory distances operate on the
// spans, never on any structural representation of the model.
struct ParamVector {
  Vector values;
  LayerMap layer_map;

  Eigen::Index size() const { return values.size(); }
  Eigen::Index num_layers() const {
    return static_cast<Eigen::Index>(layer_map.size());
  }

  auto layer(std::size_t j) {
    return values.segment(layer_map[j].offset, layer_map[j].length);
  }
  auto layer(std::size_t j) const {
    return values.segment(layer_map[j].offset, layer_map[j].length);
  }

  // Same layer map, different values. Throws on length mismatch.
  ParamVector with_values(Vector v) const {
    if (v.size() != values.size())
      throw std::invalid_argument("ParamVector::with_values: length mismatch");
    return ParamVector{std::move(v), layer_map};
  }
};

// Checks span contiguity/coverage and value finiteness.
inline void validate(const ParamVector& w) {
  Eigen::Index expected = 0;
  for (const auto& s : w.layer_map) {
    if (s.offset != expected || s.length < 0)
      throw std::invalid_argument("ParamVector: spans must be contiguous");
    expected += s.length;
  }
  if (expected != w.values.size())
    throw std::invalid_argument("ParamVector: spans must cover the vector");
  if (!w.values.allFinite())
    throw std::invalid_argument("ParamVector: non-finite values");
}

inline bool same_layer_map(const ParamVector& a, const ParamVector& b) {
  if (a.layer_map.size() != b.layer_map.size()) return false;
  for (std::size_t j = 0; j < a.layer_map.size(); ++j) {
    if (a.layer_map[j].offset != b.layer_map[j].offset ||
        a.layer_map[j].length != b.layer_map[j].length)
      return false;
  }
  return true;
}

}  // namespace fedptr
