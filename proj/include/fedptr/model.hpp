#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedptr/types.hpp"

namespace fedptr {

enum class Activation { tanh, softplus, relu };

// Dense network: input_dim -> layer_sizes[0] -> ... -> layer_sizes.back(),
// softmax cross-entropy on the last layer. layer_sizes.back() must equal
// num_classes. An empty hidden part (layer_sizes == {num_classes}) is
// plain softmax regression.
struct ModelSpec {
  Eigen::Index input_dim = 0;
  std::vector<Eigen::Index> layer_sizes;
  Activation activation = Activation::tanh;
  Eigen::Index num_classes = 0;

  Eigen::Index param_count() const {
    Eigen::Index n = 0, in = input_dim;
    for (Eigen::Index out : layer_sizes) {
      n += out * in + out;
      in = out;
    }
    return n;
  }

  LayerMap layer_map() const {
    LayerMap map;
    Eigen::Index off = 0, in = input_dim;
    for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
      Eigen::Index out = layer_sizes[l];
      map.push_back({"layer" + std::to_string(l), off, out * in + out});
      off += out * in + out;
      in = out;
    }
    return map;
  }

  void check() const {
    if (input_dim < 1 || num_classes < 1 || layer_sizes.empty())
      throw std::invalid_argument("ModelSpec: empty model");
    if (layer_sizes.back() != num_classes)
      throw std::invalid_argument(
          "ModelSpec: last layer width must equal num_classes");
  }
};

struct Batch {
  Matrix features;       // n x input_dim
  Eigen::VectorXi labels;  // values in [0, num_classes)

  Eigen::Index size() const { return features.rows(); }
};

ParamVector zero_params(const ModelSpec& spec);
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed,
                        double scale = 0.1);

double forward_loss(const ModelSpec& spec, const ParamVector& params,
                    const Batch& batch);
ParamVector grad(const ModelSpec& spec, const ParamVector& params,
                 const Batch& batch);
ParamVector hvp(const ModelSpec& spec, const ParamVector& params,
                const Batch& batch, const ParamVector& v);

// Gradient w.r.t. both the parameters and the input features.
struct LossGrads {
  double loss = 0.0;
  Vector d_params;
  Matrix d_features;
};
LossGrads grad_with_features(const ModelSpec& spec, const ParamVector& params,
                             const Matrix& features,
                             const Eigen::VectorXi& labels);

// Pushes tangent p through the backward pass: hp = H_ww * p and
// mixed = d/dX <grad_w L, p>, both exact. One pass computes both; this is
// the second-order kernel of the trajectory-matching meta-gradient.
struct SecondOrder {
  Vector hp;
  Matrix mixed;
};
SecondOrder hvp_and_mixed(const ModelSpec& spec, const ParamVector& params,
                          const Matrix& features, const Eigen::VectorXi& labels,
                          const Vector& p);

double accuracy(const ModelSpec& spec, const ParamVector& params,
                const Matrix& features, const Eigen::VectorXi& labels);

}  // namespace fedptr
