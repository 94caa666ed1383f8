#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <utility>
#include <vector>

#include "fedptr/data.hpp"
#include "fedptr/model.hpp"

namespace fedptr {

// Ring buffer of the last (capacity) global models with round stamps.
class TrajectoryWindow {
 public:
  explicit TrajectoryWindow(std::size_t capacity) : capacity_(capacity) {}

  void push(int round, ParamVector model);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  int newest_round() const { return entries_.back().first; }
  int oldest_round() const { return entries_.front().first; }

  // Exact (t-m, t) pair when present.
  std::optional<std::pair<ParamVector, ParamVector>> endpoints(int t,
                                                               int m) const;
  // (oldest-available, newest) — the partial-participation fallback.
  std::optional<std::pair<ParamVector, ParamVector>> span() const;

  const std::vector<ParamVector> models() const;

 private:
  std::size_t capacity_;
  std::deque<std::pair<int, ParamVector>> entries_;
};

struct MttConfig {
  int outer_steps = 20;  // H
  int inner_steps = 10;  // R
  double aux_lr = 0.1;
};

struct MttResult {
  AuxiliaryDataset aux;
  std::vector<double> losses;  // one per outer iteration, pre-update
  bool skipped = false;        // degenerate trajectory, aux unchanged
};

// Thrown by mtt_loss / meta_gradient when the trajectory displacement is
// numerically zero; mtt_update catches it and reports a skip instead.
struct DegenerateTrajectory : std::runtime_error {
  DegenerateTrajectory()
      : std::runtime_error("degenerate trajectory: ||w_end - w_start|| ~ 0") {}
};

ParamVector unroll_inner(const ModelSpec& spec, const AuxiliaryDataset& aux,
                         const ParamVector& w_start, int inner_steps);

double mtt_loss(const ParamVector& w_hat, const ParamVector& w_start,
                const ParamVector& w_end);

struct MetaGradient {
  Matrix d_features;
  double d_beta = 0.0;
  double loss = 0.0;
};
MetaGradient meta_gradient(const ModelSpec& spec, const AuxiliaryDataset& aux,
                           const ParamVector& w_start, const ParamVector& w_end,
                           int inner_steps);

MttResult mtt_update(const ModelSpec& spec, AuxiliaryDataset aux,
                     const ParamVector& w_start, const ParamVector& w_end,
                     const MttConfig& cfg);

ParamVector project_trajectory(const ModelSpec& spec, const ParamVector& w_t,
                               const AuxiliaryDataset& aux, int steps,
                               double eta);

}  // namespace fedptr
