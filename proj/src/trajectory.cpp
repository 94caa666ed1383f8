#include "fedptr/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedptr {

namespace {
constexpr double kDegenerateSq = 1e-24;  // threshold on squared denominator
}

void TrajectoryWindow::push(int round, ParamVector model) {
  if (!entries_.empty() && round <= entries_.back().first)
    throw std::invalid_argument("TrajectoryWindow: rounds must increase");
  entries_.emplace_back(round, std::move(model));
  while (entries_.size() > capacity_) entries_.pop_front();
}

std::optional<std::pair<ParamVector, ParamVector>> TrajectoryWindow::endpoints(
    int t, int m) const {
  const ParamVector* start = nullptr;
  const ParamVector* end = nullptr;
  for (const auto& [round, model] : entries_) {
    if (round == t - m) start = &model;
    if (round == t) end = &model;
  }
  if (!start || !end) return std::nullopt;
  return std::make_pair(*start, *end);
}

std::optional<std::pair<ParamVector, ParamVector>> TrajectoryWindow::span()
    const {
  if (entries_.size() < 2) return std::nullopt;
  return std::make_pair(entries_.front().second, entries_.back().second);
}

const std::vector<ParamVector> TrajectoryWindow::models() const {
  std::vector<ParamVector> out;
  out.reserve(entries_.size());
  for (const auto& [round, model] : entries_) out.push_back(model);
  return out;
}

ParamVector unroll_inner(const ModelSpec& spec, const AuxiliaryDataset& aux,
                         const ParamVector& w_start, int inner_steps) {
  ParamVector w = w_start;
  Batch batch{aux.features, aux.labels};
  for (int r = 0; r < inner_steps; ++r) {
    w.values -= aux.beta * grad(spec, w, batch).values;
    if (!w.values.allFinite())
      throw std::runtime_error("unroll_inner: non-finite parameters at step " +
                               std::to_string(r));
  }
  return w;
}

double mtt_loss(const ParamVector& w_hat, const ParamVector& w_start,
                const ParamVector& w_end) {
  double den = (w_end.values - w_start.values).squaredNorm();
  if (den < kDegenerateSq) throw DegenerateTrajectory{};
  return (w_hat.values - w_end.values).squaredNorm() / den;
}

MetaGradient meta_gradient(const ModelSpec& spec, const AuxiliaryDataset& aux,
                           const ParamVector& w_start, const ParamVector& w_end,
                           int inner_steps) {
  const double den = (w_end.values - w_start.values).squaredNorm();
  if (den < kDegenerateSq) throw DegenerateTrajectory{};

  MetaGradient out;
  out.d_features = Matrix::Zero(aux.features.rows(), aux.features.cols());

  // Forward unroll, keeping iterates and their auxiliary gradients.
  std::vector<Vector> iters;  // w_0 .. w_R
  std::vector<Vector> grads;  // g(w_0) .. g(w_{R-1})
  iters.reserve(static_cast<std::size_t>(inner_steps) + 1);
  grads.reserve(static_cast<std::size_t>(inner_steps));
  Batch batch{aux.features, aux.labels};
  ParamVector w = w_start;
  iters.push_back(w.values);
  for (int r = 0; r < inner_steps; ++r) {
    grads.push_back(grad(spec, w, batch).values);
    w.values -= aux.beta * grads.back();
    if (!w.values.allFinite())
      throw std::runtime_error("meta_gradient: non-finite parameters at step " +
                               std::to_string(r));
    iters.push_back(w.values);
  }

  out.loss = (w.values - w_end.values).squaredNorm() / den;

  // Reverse accumulation. Adjoint of w_{r+1} is p; each step needs one
  // dual pass giving H*p and the mixed (features, params) term.
  Vector p = 2.0 * (w.values - w_end.values) / den;
  for (int r = inner_steps - 1; r >= 0; --r) {
    const std::size_t ur = static_cast<std::size_t>(r);
    out.d_beta -= grads[ur].dot(p);
    auto so = hvp_and_mixed(spec, w.with_values(iters[ur]), aux.features,
                            aux.labels, p);
    out.d_features -= aux.beta * so.mixed;
    p -= aux.beta * so.hp;
  }
  return out;
}

MttResult mtt_update(const ModelSpec& spec, AuxiliaryDataset aux,
                     const ParamVector& w_start, const ParamVector& w_end,
                     const MttConfig& cfg) {
  MttResult result;
  result.losses.reserve(static_cast<std::size_t>(cfg.outer_steps));
  // beta stays positive by stepping in log space. The clamp keeps a
  // single outer iteration from moving beta by more than a factor of
  // e^0.5, which would otherwise happen with aggressive aux_lr values.
  double log_beta = std::log(aux.beta);
  for (int h = 0; h < cfg.outer_steps; ++h) {
    MetaGradient mg;
    try {
      mg = meta_gradient(spec, aux, w_start, w_end, cfg.inner_steps);
    } catch (const DegenerateTrajectory&) {
      result.aux = std::move(aux);
      result.skipped = true;
      return result;
    }
    result.losses.push_back(mg.loss);
    aux.features -= cfg.aux_lr * mg.d_features;
    double step = std::clamp(cfg.aux_lr * mg.d_beta * aux.beta, -0.5, 0.5);
    if (step != 0.0) {
      log_beta -= step;
      aux.beta = std::exp(log_beta);
    }
  }
  result.aux = std::move(aux);
  return result;
}

ParamVector project_trajectory(const ModelSpec& spec, const ParamVector& w_t,
                               const AuxiliaryDataset& aux, int steps,
                               double eta) {
  ParamVector w = w_t;
  Batch batch{aux.features, aux.labels};
  for (int k = 0; k < steps; ++k) {
    w.values -= eta * grad(spec, w, batch).values;
    if (!w.values.allFinite())
      throw std::runtime_error(
          "project_trajectory: non-finite parameters at step " +
          std::to_string(k));
  }
  return w;
}

}  // namespace fedptr
