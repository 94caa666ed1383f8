#pragma once

#include <optional>
#include <vector>

#include "fedptr/data.hpp"
#include "fedptr/model.hpp"

namespace fedptr {

// nullopt when either vector is (numerically) zero.
std::optional<double> cosine_similarity(const Vector& a, const Vector& b);

// Gradient-direction probe for one client round:
//   cos_aux   = cos(w_t - w_tilde, w_t - w_next)
//   cos_local = cos(w_t - w_local, w_t - w_next)
struct SimilarityProbe {
  std::optional<double> cos_aux;
  std::optional<double> cos_local;
};
SimilarityProbe similarity_probe(const Vector& w_t, const Vector& w_next,
                                 const std::optional<Vector>& w_tilde,
                                 const Vector& w_local);

std::vector<double> layer_norms(const ParamVector& w, const ParamVector& ref);

// Smallest B certifying local dissimilarity at w:
// sqrt( (1/N) sum_i ||grad L_i(w)||^2 / ||grad L(w)||^2 ).
// nullopt when the global gradient is numerically zero.
std::optional<double> estimate_B(const ModelSpec& spec,
                                 const ClientPartition& partition,
                                 const Dataset& data, const ParamVector& w);

// max over probe points of ||grad L(w) - grad L(w; aux)||.
double estimate_sigma_d(const ModelSpec& spec, const AuxiliaryDataset& aux,
                        const Dataset& data,
                        const std::vector<ParamVector>& probe_points);

}  // namespace fedptr
