#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedptr/data.hpp"
#include "fedptr/localsolver.hpp"
#include "fedptr/trajectory.hpp"

namespace fedptr {

enum class Algorithm { fedavg, fedprox, fedptr, fedptr_s, distill_augment };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct FedConfig {
  Algorithm algorithm = Algorithm::fedavg;
  int rounds = 60;
  std::size_t n_clients = 10;
  double participation_ratio = 1.0;
  int window_m = 1;           // trajectory window size m
  int projection_steps = 5;   // K
  double projection_lr = 0.01;  // eta
  double base_lambda = 0.05;
  bool adaptive_lambda = true;
  MttConfig mtt;
  int mtt_frequency = 1;  // F rounds between MTT updates; 0 = one-shot
  Eigen::Index aux_per_class = 10;
  double beta_init = 0.01;
  SolverBudget solver;
  std::uint64_t seed = 1;
  bool probe_mode = false;  // keep MTT + projection, force lambda~ = 0
  int threads = 1;

  void check() const;
};

struct ClientState {
  AuxiliaryDataset aux;
  TrajectoryWindow window{2};  // global models this client has observed
  int mtt_updates = 0;
};

struct FedState {
  ModelSpec spec;
  ParamVector global_model;
  std::vector<ClientState> clients;  // fedptr / distill_augment only
  std::optional<AuxiliaryDataset> server_aux;  // fedptr_s only
  TrajectoryWindow server_window{2};
  int round = 0;
  int server_mtt_updates = 0;
  int client_mtt_updates = 0;
};

struct RoundMetrics {
  int round = 0;
  double train_loss = 0.0;
  double test_acc = 0.0;
  double grad_norm = 0.0;
  double gamma_mean = 0.0;
  double cos_aux = 0.0;    // NaN when no projection this round
  double cos_local = 0.0;  // NaN when undefined (zero displacement)
  double mtt_loss = 0.0;   // NaN when no MTT update ran this round
  int skipped = 0;         // degenerate-trajectory MTT skips
  double adaptive_identity_err = 0.0;  // max |lambda_j * diff_j - base|
};

std::vector<std::size_t> sample_participants(std::size_t n_clients,
                                             double ratio, int round,
                                             std::uint64_t seed);

ParamVector aggregate(const std::vector<ParamVector>& models,
                      const std::vector<double>& weights);

FedState init_fed_state(const ModelSpec& spec, const FedConfig& cfg,
                        const Dataset& data, const ClientPartition& partition);

RoundMetrics run_round(FedState& state, const FedConfig& cfg,
                       const Dataset& data, const ClientPartition& partition);

struct ExperimentResult {
  std::vector<RoundMetrics> metrics;
  ParamVector final_model;
  double last5_acc = 0.0;  // mean test accuracy of the final 5 rounds
  std::vector<AuxiliaryDataset> final_client_aux;
  std::optional<AuxiliaryDataset> final_server_aux;
  int client_mtt_updates = 0;
  int server_mtt_updates = 0;
};

ExperimentResult run_experiment(const ModelSpec& spec, const FedConfig& cfg,
                                const Dataset& data,
                                const ClientPartition& partition,
                                const Dataset& test);

}  // namespace fedptr
