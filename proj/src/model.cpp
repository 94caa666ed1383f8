#include "fedptr/model.hpp"

#include <random>

#include "fedptr/dual.hpp"
#include "fedptr/rng.hpp"

namespace fedptr {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
T exp_s(T x) {
  using std::exp;
  return exp(x);
}
template <typename T>
T log1p_s(T x) {
  using std::log1p;
  return log1p(x);
}
template <typename T>
T softplus_s(T x) {
  // log(1 + e^x), overflow-safe on both tails
  if (value_of(x) > 0.0) return x + log1p_s(exp_s(-x));
  return log1p_s(exp_s(x));
}

template <typename T>
struct NetResult {
  T loss{};
  Vec<T> d_params;
  Mat<T> d_features;
};

// Analytic forward + backward of the mean softmax cross-entropy over a
// batch, generic in the scalar so it runs on double and on Dual.
template <typename T>
NetResult<T> forward_backward(const ModelSpec& spec, const Vec<T>& params,
                              const Mat<T>& X, const Eigen::VectorXi& y,
                              bool want_loss_only, bool want_dx) {
  const Eigen::Index n = X.rows();
  const Eigen::Index num_layers =
      static_cast<Eigen::Index>(spec.layer_sizes.size());

  std::vector<Mat<T>> acts;  // acts[l] = input to layer l
  acts.reserve(num_layers + 1);
  acts.push_back(X);
  std::vector<Mat<T>> zs(num_layers);

  Eigen::Index off = 0, in_w = spec.input_dim;
  std::vector<Eigen::Index> w_offsets(num_layers), b_offsets(num_layers);
  std::vector<Eigen::Index> ins(num_layers), outs(num_layers);
  for (Eigen::Index l = 0; l < num_layers; ++l) {
    Eigen::Index out_w = spec.layer_sizes[static_cast<std::size_t>(l)];
    w_offsets[l] = off;
    b_offsets[l] = off + out_w * in_w;
    ins[l] = in_w;
    outs[l] = out_w;
    off += out_w * in_w + out_w;
    in_w = out_w;
  }

  for (Eigen::Index l = 0; l < num_layers; ++l) {
    Eigen::Map<const Mat<T>> W(params.data() + w_offsets[l], outs[l], ins[l]);
    Eigen::Map<const Vec<T>> b(params.data() + b_offsets[l], outs[l]);
    Mat<T> Z = acts.back() * W.transpose();
    Z.rowwise() += b.transpose();
    zs[l] = Z;
    if (l + 1 < num_layers) {
      switch (spec.activation) {
        case Activation::tanh:
          acts.push_back(Z.unaryExpr([](T x) {
            using std::tanh;
            return tanh(x);
          }));
          break;
        case Activation::softplus:
          acts.push_back(Z.unaryExpr([](T x) { return softplus_s(x); }));
          break;
        case Activation::relu:
          acts.push_back(Z.unaryExpr([](T x) { return x > T(0) ? x : T(0); }));
          break;
      }
    }
  }

  // Stable softmax cross-entropy on the logits.
  const Mat<T>& logits = zs[num_layers - 1];
  Vec<T> row_max = logits.rowwise().maxCoeff();
  Mat<T> shifted = logits.colwise() - row_max;
  Mat<T> expz = shifted.unaryExpr([](T x) { return exp_s(x); });
  Vec<T> row_sum = expz.rowwise().sum();
  T loss = T(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    using std::log;
    loss += log(row_sum(i)) - shifted(i, y(i));
  }
  loss = loss / T(static_cast<double>(n));

  NetResult<T> result;
  result.loss = loss;
  if (want_loss_only) return result;

  result.d_params = Vec<T>::Zero(params.size());
  Mat<T> dZ = expz.array().colwise() / row_sum.array();
  for (Eigen::Index i = 0; i < n; ++i) dZ(i, y(i)) -= T(1);
  dZ *= T(1.0 / static_cast<double>(n));

  for (Eigen::Index l = num_layers - 1; l >= 0; --l) {
    Eigen::Map<const Mat<T>> W(params.data() + w_offsets[l], outs[l], ins[l]);
    Eigen::Map<Mat<T>> dW(result.d_params.data() + w_offsets[l], outs[l],
                          ins[l]);
    Eigen::Map<Vec<T>> db(result.d_params.data() + b_offsets[l], outs[l]);
    dW = dZ.transpose() * acts[l];
    db = dZ.colwise().sum().transpose();
    if (l == 0) {
      if (want_dx) result.d_features = dZ * W;
      break;
    }
    Mat<T> dA = dZ * W;
    switch (spec.activation) {
      case Activation::tanh:
        dZ = dA.cwiseProduct(
            acts[l].unaryExpr([](T a) { return T(1) - a * a; }));
        break;
      case Activation::softplus:
        dZ = dA.cwiseProduct(zs[l - 1].unaryExpr(
            [](T z) { return T(1) / (T(1) + exp_s(-z)); }));
        break;
      case Activation::relu:
        dZ = dA.cwiseProduct(
            zs[l - 1].unaryExpr([](T z) { return z > T(0) ? T(1) : T(0); }));
        break;
    }
  }
  return result;
}

void check_batch(const ModelSpec& spec, const ParamVector& params,
                 const Matrix& features, const Eigen::VectorXi& labels) {
  spec.check();
  if (params.size() != spec.param_count())
    throw std::invalid_argument("model: parameter length mismatch");
  if (!params.values.allFinite())
    throw std::invalid_argument("model: non-finite parameters");
  if (features.rows() < 1)
    throw std::invalid_argument("model: empty batch");
  if (features.cols() != spec.input_dim)
    throw std::invalid_argument("model: feature dimension mismatch");
  if (labels.size() != features.rows())
    throw std::invalid_argument("model: label count mismatch");
  if (!features.allFinite())
    throw std::invalid_argument("model: non-finite features");
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels(i) < 0 || labels(i) >= spec.num_classes)
      throw std::invalid_argument("model: label out of range");
}

}  // namespace

ParamVector zero_params(const ModelSpec& spec) {
  spec.check();
  return {Vector::Zero(spec.param_count()), spec.layer_map()};
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed,
                        double scale) {
  spec.check();
  auto eng = rng::stream(seed, rng::Tag::model_init);
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(spec.param_count());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(eng);
  return {std::move(v), spec.layer_map()};
}

double forward_loss(const ModelSpec& spec, const ParamVector& params,
                    const Batch& batch) {
  check_batch(spec, params, batch.features, batch.labels);
  return forward_backward<double>(spec, params.values, batch.features,
                                  batch.labels, true, false)
      .loss;
}

ParamVector grad(const ModelSpec& spec, const ParamVector& params,
                 const Batch& batch) {
  check_batch(spec, params, batch.features, batch.labels);
  auto r = forward_backward<double>(spec, params.values, batch.features,
                                    batch.labels, false, false);
  return params.with_values(std::move(r.d_params));
}

LossGrads grad_with_features(const ModelSpec& spec, const ParamVector& params,
                             const Matrix& features,
                             const Eigen::VectorXi& labels) {
  check_batch(spec, params, features, labels);
  auto r =
      forward_backward<double>(spec, params.values, features, labels, false,
                               true);
  return {r.loss, std::move(r.d_params), std::move(r.d_features)};
}

ParamVector hvp(const ModelSpec& spec, const ParamVector& params,
                const Batch& batch, const ParamVector& v) {
  check_batch(spec, params, batch.features, batch.labels);
  if (v.size() != params.size())
    throw std::invalid_argument("hvp: direction length mismatch");
  Vec<Dual> p(params.size());
  for (Eigen::Index i = 0; i < p.size(); ++i)
    p(i) = Dual(params.values(i), v.values(i));
  Mat<Dual> X = batch.features.cast<Dual>();
  auto r = forward_backward<Dual>(spec, p, X, batch.labels, false, false);
  Vector out(params.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = r.d_params(i).d;
  return params.with_values(std::move(out));
}

SecondOrder hvp_and_mixed(const ModelSpec& spec, const ParamVector& params,
                          const Matrix& features, const Eigen::VectorXi& labels,
                          const Vector& p) {
  check_batch(spec, params, features, labels);
  Vec<Dual> w(params.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w(i) = Dual(params.values(i), p(i));
  Mat<Dual> X = features.cast<Dual>();
  auto r = forward_backward<Dual>(spec, w, X, labels, false, true);
  SecondOrder out;
  out.hp.resize(params.size());
  for (Eigen::Index i = 0; i < out.hp.size(); ++i) out.hp(i) = r.d_params(i).d;
  out.mixed.resize(features.rows(), features.cols());
  for (Eigen::Index i = 0; i < out.mixed.rows(); ++i)
    for (Eigen::Index j = 0; j < out.mixed.cols(); ++j)
      out.mixed(i, j) = r.d_features(i, j).d;
  return out;
}

double accuracy(const ModelSpec& spec, const ParamVector& params,
                const Matrix& features, const Eigen::VectorXi& labels) {
  check_batch(spec, params, features, labels);
  Mat<double> A = features;
  Eigen::Index off = 0, in_w = spec.input_dim;
  for (std::size_t l = 0; l < spec.layer_sizes.size(); ++l) {
    Eigen::Index out_w = spec.layer_sizes[l];
    Eigen::Map<const Matrix> W(params.values.data() + off, out_w, in_w);
    Eigen::Map<const Vector> b(params.values.data() + off + out_w * in_w,
                               out_w);
    Matrix Z = A * W.transpose();
    Z.rowwise() += b.transpose();
    if (l + 1 < spec.layer_sizes.size()) {
      switch (spec.activation) {
        case Activation::tanh:
          A = Z.array().tanh();
          break;
        case Activation::softplus:
          A = Z.unaryExpr([](double x) { return softplus_s(x); });
          break;
        case Activation::relu:
          A = Z.cwiseMax(0.0);
          break;
      }
    } else {
      A = Z;
    }
    off += out_w * in_w + out_w;
    in_w = out_w;
  }
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    Eigen::Index arg;
    A.row(i).maxCoeff(&arg);
    if (arg == labels(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(A.rows());
}

}  // namespace fedptr
