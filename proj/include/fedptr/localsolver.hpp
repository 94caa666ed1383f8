#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fedptr/model.hpp"

namespace fedptr {

// Proximal regularizer toward `reference`, with per-layer weights frozen
// at construction time (the local objective stays stationary during the
// solve).
struct ProxSpec {
  ParamVector reference;
  double base_lambda = 0.0;
  bool adaptive = false;
  std::vector<double> per_layer_lambda;

  bool active() const {
    for (double l : per_layer_lambda)
      if (l != 0.0) return true;
    return false;
  }
};

struct SolverBudget {
  int epochs = 1;
  Eigen::Index batch_size = 500;
  double lr = 0.01;
  double momentum = 0.5;
};

std::vector<double> layer_adaptive_lambda(const ParamVector& w,
                                          const ParamVector& ref,
                                          double base_lambda);

// per_layer_lambda evaluated at w_init and frozen.
ProxSpec make_prox(const ParamVector& w_init, ParamVector reference,
                   double base_lambda, bool adaptive);

double prox_objective(const ModelSpec& spec, const ParamVector& w,
                      const Batch& data, const ProxSpec& prox);

ParamVector prox_gradient(const ModelSpec& spec, const ParamVector& w,
                          const Batch& data, const ProxSpec& prox);

struct LocalSolveResult {
  ParamVector params;
  // ||grad h(out)|| / ||grad h(init)||; nullopt when the start point was
  // already stationary.
  std::optional<double> gamma;
};

LocalSolveResult local_solve(const ModelSpec& spec, const ParamVector& w_init,
                             const Batch& local_data, const ProxSpec& prox,
                             const SolverBudget& budget, std::uint64_t seed);

std::optional<double> gamma_inexactness(const ModelSpec& spec,
                                        const ParamVector& w_candidate,
                                        const ParamVector& w_init,
                                        const Batch& local_data,
                                        const ProxSpec& prox);

}  // namespace fedptr
