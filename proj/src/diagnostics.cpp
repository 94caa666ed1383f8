#include "fedptr/diagnostics.hpp"

#include <cmath>
#include <stdexcept>

namespace fedptr {

std::optional<double> cosine_similarity(const Vector& a, const Vector& b) {
  double na = a.norm(), nb = b.norm();
  if (na < 1e-20 || nb < 1e-20) return std::nullopt;
  return a.dot(b) / (na * nb);
}

SimilarityProbe similarity_probe(const Vector& w_t, const Vector& w_next,
                                 const std::optional<Vector>& w_tilde,
                                 const Vector& w_local) {
  SimilarityProbe out;
  Vector global_dir = w_t - w_next;
  if (w_tilde) out.cos_aux = cosine_similarity(w_t - *w_tilde, global_dir);
  out.cos_local = cosine_similarity(w_t - w_local, global_dir);
  return out;
}

std::vector<double> layer_norms(const ParamVector& w, const ParamVector& ref) {
  if (!same_layer_map(w, ref))
    throw std::invalid_argument("layer_norms: layer map mismatch");
  std::vector<double> out(w.layer_map.size());
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = (w.layer(j) - ref.layer(j)).norm();
  return out;
}

std::optional<double> estimate_B(const ModelSpec& spec,
                                 const ClientPartition& partition,
                                 const Dataset& data, const ParamVector& w) {
  Vector global_grad = grad(spec, w, data.as_batch()).values;
  double gsq = global_grad.squaredNorm();
  if (gsq < 1e-40) return std::nullopt;  // dissimilarity unbounded here

  double mean_local_sq = 0.0;
  for (const auto& idx : partition.client_indices) {
    if (idx.empty()) continue;  // zero-sample client contributes 0
    mean_local_sq += grad(spec, w, data.gather(idx)).values.squaredNorm();
  }
  mean_local_sq /= static_cast<double>(partition.n_clients());
  return std::sqrt(mean_local_sq / gsq);
}

double estimate_sigma_d(const ModelSpec& spec, const AuxiliaryDataset& aux,
                        const Dataset& data,
                        const std::vector<ParamVector>& probe_points) {
  if (probe_points.empty())
    throw std::invalid_argument("estimate_sigma_d: no probe points");
  Batch aux_batch{aux.features, aux.labels};
  double worst = 0.0;
  for (const auto& w : probe_points) {
    double diff = (grad(spec, w, data.as_batch()).values -
                   grad(spec, w, aux_batch).values)
                      .norm();
    worst = std::max(worst, diff);
  }
  return worst;
}

}  // namespace fedptr
