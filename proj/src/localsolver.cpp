#include "fedptr/localsolver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "fedptr/rng.hpp"

namespace fedptr {

std::vector<double> layer_adaptive_lambda(const ParamVector& w,
                                          const ParamVector& ref,
                                          double base_lambda) {
  if (!same_layer_map(w, ref))
    throw std::invalid_argument("layer_adaptive_lambda: layer map mismatch");
  std::vector<double> out(w.layer_map.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    double diff = (w.layer(j) - ref.layer(j)).norm();
    // Zero-difference layers keep the base value.
    out[j] = diff > 0.0 ? base_lambda / diff : base_lambda;
  }
  return out;
}

ProxSpec make_prox(const ParamVector& w_init, ParamVector reference,
                   double base_lambda, bool adaptive) {
  ProxSpec prox;
  prox.base_lambda = base_lambda;
  prox.adaptive = adaptive;
  if (adaptive) {
    prox.per_layer_lambda =
        layer_adaptive_lambda(w_init, reference, base_lambda);
  } else {
    prox.per_layer_lambda.assign(w_init.layer_map.size(), base_lambda);
  }
  prox.reference = std::move(reference);
  return prox;
}

double prox_objective(const ModelSpec& spec, const ParamVector& w,
                      const Batch& data, const ProxSpec& prox) {
  double value = forward_loss(spec, w, data);
  if (!prox.active()) return value;
  for (std::size_t j = 0; j < prox.per_layer_lambda.size(); ++j) {
    value += 0.5 * prox.per_layer_lambda[j] *
             (w.layer(j) - prox.reference.layer(j)).squaredNorm();
  }
  return value;
}

ParamVector prox_gradient(const ModelSpec& spec, const ParamVector& w,
                          const Batch& data, const ProxSpec& prox) {
  ParamVector g = grad(spec, w, data);
  if (!prox.active()) return g;
  for (std::size_t j = 0; j < prox.per_layer_lambda.size(); ++j) {
    g.layer(j) +=
        prox.per_layer_lambda[j] * (w.layer(j) - prox.reference.layer(j));
  }
  return g;
}

LocalSolveResult local_solve(const ModelSpec& spec, const ParamVector& w_init,
                             const Batch& local_data, const ProxSpec& prox,
                             const SolverBudget& budget, std::uint64_t seed) {
  if (local_data.size() < 1)
    throw std::invalid_argument("local_solve: empty shard");
  if (budget.epochs < 1 || budget.batch_size < 1)
    throw std::invalid_argument("local_solve: invalid budget");

  ParamVector w = w_init;
  Vector momentum_buf = Vector::Zero(w.size());

  std::vector<Eigen::Index> order(static_cast<std::size_t>(local_data.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  int step = 0;
  for (int epoch = 0; epoch < budget.epochs; ++epoch) {
    auto eng = rng::stream(seed, rng::Tag::shuffle,
                           static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), eng);
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(budget.batch_size)) {
      std::size_t count = std::min(static_cast<std::size_t>(budget.batch_size),
                                   order.size() - pos);
      Batch mini;
      mini.features.resize(static_cast<Eigen::Index>(count),
                           local_data.features.cols());
      mini.labels.resize(static_cast<Eigen::Index>(count));
      for (std::size_t i = 0; i < count; ++i) {
        mini.features.row(static_cast<Eigen::Index>(i)) =
            local_data.features.row(order[pos + i]);
        mini.labels(static_cast<Eigen::Index>(i)) =
            local_data.labels(order[pos + i]);
      }
      ParamVector g = prox_gradient(spec, w, mini, prox);
      momentum_buf = budget.momentum * momentum_buf + g.values;
      w.values -= budget.lr * momentum_buf;
      if (!w.values.allFinite())
        throw std::runtime_error("local_solve: non-finite parameters at step " +
                                 std::to_string(step));
      ++step;
    }
  }

  LocalSolveResult out;
  out.gamma = gamma_inexactness(spec, w, w_init, local_data, prox);
  out.params = std::move(w);
  return out;
}

std::optional<double> gamma_inexactness(const ModelSpec& spec,
                                        const ParamVector& w_candidate,
                                        const ParamVector& w_init,
                                        const Batch& local_data,
                                        const ProxSpec& prox) {
  double denom = prox_gradient(spec, w_init, local_data, prox).values.norm();
  if (denom < 1e-20) return std::nullopt;  // already stationary
  return prox_gradient(spec, w_candidate, local_data, prox).values.norm() /
         denom;
}

}  // namespace fedptr
