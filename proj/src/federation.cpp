#include "fedptr/federation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fedptr/diagnostics.hpp"
#include "fedptr/rng.hpp"

namespace fedptr {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool mtt_due(int frequency, int round, int updates_done) {
  if (frequency == 0) return updates_done == 0;  // one-shot
  if (frequency <= 1) return true;
  return round % frequency == 0;
}

// Outcome of one participant's round, joined by the orchestrator.
struct ClientOutcome {
  ParamVector local;
  double weight = 0.0;
  std::optional<double> gamma;
  std::optional<Vector> tilde;
  std::optional<AuxiliaryDataset> new_aux;
  int mtt_runs = 0;
  int mtt_skips = 0;
  double mtt_final_loss = kNaN;
  double adaptive_err = 0.0;
};
}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::fedavg: return "fedavg";
    case Algorithm::fedprox: return "fedprox";
    case Algorithm::fedptr: return "fedptr";
    case Algorithm::fedptr_s: return "fedptr_s";
    case Algorithm::distill_augment: return "distill_augment";
  }
  throw std::logic_error("unknown algorithm");
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "fedavg") return Algorithm::fedavg;
  if (s == "fedprox") return Algorithm::fedprox;
  if (s == "fedptr") return Algorithm::fedptr;
  if (s == "fedptr_s") return Algorithm::fedptr_s;
  if (s == "distill_augment") return Algorithm::distill_augment;
  throw std::invalid_argument("unknown algorithm: " + s);
}

void FedConfig::check() const {
  if (rounds < 1) throw std::invalid_argument("FedConfig: rounds");
  if (n_clients < 1) throw std::invalid_argument("FedConfig: n_clients");
  if (participation_ratio <= 0.0 || participation_ratio > 1.0)
    throw std::invalid_argument("FedConfig: participation_ratio in (0,1]");
  if (window_m < 0) throw std::invalid_argument("FedConfig: window");
  if (projection_steps < 0)
    throw std::invalid_argument("FedConfig: projection_steps");
  if (projection_lr <= 0.0)
    throw std::invalid_argument("FedConfig: projection_lr");
  if (base_lambda < 0.0) throw std::invalid_argument("FedConfig: base_lambda");
  if (mtt.outer_steps < 1 || mtt.inner_steps < 1 || mtt.aux_lr < 0.0)
    throw std::invalid_argument("FedConfig: mtt");
  if (mtt_frequency < 0)
    throw std::invalid_argument("FedConfig: mtt_frequency");
  if (aux_per_class < 1)
    throw std::invalid_argument("FedConfig: aux_per_class");
  if (beta_init <= 0.0) throw std::invalid_argument("FedConfig: beta_init");
  if (solver.epochs < 1 || solver.batch_size < 1 || solver.lr <= 0.0 ||
      solver.momentum < 0.0 || solver.momentum >= 1.0)
    throw std::invalid_argument("FedConfig: solver budget");
  if (threads < 1) throw std::invalid_argument("FedConfig: threads");
}

std::vector<std::size_t> sample_participants(std::size_t n_clients,
                                             double ratio, int round,
                                             std::uint64_t seed) {
  if (ratio <= 0.0 || ratio > 1.0)
    throw std::invalid_argument("sample_participants: ratio");
  std::size_t count = static_cast<std::size_t>(std::max<long long>(
      1, std::llround(ratio * static_cast<double>(n_clients))));
  count = std::min(count, n_clients);

  std::vector<std::size_t> pool(n_clients);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  auto eng = rng::stream(seed, rng::Tag::participant,
                         static_cast<std::uint64_t>(round));
  // Partial Fisher-Yates; result sorted for a stable aggregation order.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_clients - 1);
    std::swap(pool[i], pool[pick(eng)]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

ParamVector aggregate(const std::vector<ParamVector>& models,
                      const std::vector<double>& weights) {
  if (models.empty() || models.size() != weights.size())
    throw std::invalid_argument("aggregate: size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("aggregate: negative weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("aggregate: all-zero weights");
  if (models.size() == 1) return models[0];  // bit-exact identity

  for (std::size_t i = 1; i < models.size(); ++i)
    if (!same_layer_map(models[0], models[i]))
      throw std::invalid_argument("aggregate: layer map mismatch");

  Vector acc = Vector::Zero(models[0].size());
  for (std::size_t i = 0; i < models.size(); ++i)
    acc += (weights[i] / total) * models[i].values;
  return models[0].with_values(std::move(acc));
}

FedState init_fed_state(const ModelSpec& spec, const FedConfig& cfg,
                        const Dataset& data, const ClientPartition& partition) {
  cfg.check();
  if (partition.n_clients() != cfg.n_clients)
    throw std::invalid_argument("init_fed_state: partition size mismatch");

  FedState state;
  state.spec = spec;
  state.global_model = init_params(spec, cfg.seed);
  state.server_window =
      TrajectoryWindow(static_cast<std::size_t>(cfg.window_m) + 1);

  const bool client_side = cfg.algorithm == Algorithm::fedptr ||
                           cfg.algorithm == Algorithm::distill_augment;
  if (client_side) {
    state.clients.reserve(cfg.n_clients);
    for (std::size_t i = 0; i < cfg.n_clients; ++i) {
      ClientState cs;
      cs.window = TrajectoryWindow(static_cast<std::size_t>(cfg.window_m) + 1);
      std::optional<Batch> local;
      if (!partition.client_indices[i].empty())
        local = data.gather(partition.client_indices[i]);
      if (local) {
        cs.aux = init_auxiliary(local, data.num_classes, cfg.aux_per_class,
                                data.dim(), AuxInitMode::client,
                                rng::mix(cfg.seed, i), cfg.beta_init);
      } else {
        cs.aux = init_auxiliary(std::nullopt, data.num_classes,
                                cfg.aux_per_class, data.dim(),
                                AuxInitMode::server, rng::mix(cfg.seed, i),
                                cfg.beta_init);
      }
      state.clients.push_back(std::move(cs));
    }
  } else if (cfg.algorithm == Algorithm::fedptr_s) {
    state.server_aux = init_auxiliary(
        std::nullopt, data.num_classes, cfg.aux_per_class, data.dim(),
        AuxInitMode::server, rng::mix(cfg.seed, 0xfeed), cfg.beta_init);
  }
  return state;
}

RoundMetrics run_round(FedState& state, const FedConfig& cfg,
                       const Dataset& data, const ClientPartition& partition) {
  const int t = state.round;
  const ParamVector w_t = state.global_model;
  state.server_window.push(t, w_t);

  RoundMetrics metrics;
  metrics.round = t;
  metrics.cos_aux = kNaN;
  metrics.cos_local = kNaN;
  metrics.mtt_loss = kNaN;

  auto participants = sample_participants(cfg.n_clients,
                                          cfg.participation_ratio, t, cfg.seed);

  // Server-side trajectory step (fedptr_s only).
  std::optional<Vector> server_tilde;
  double server_lambda = 0.0;
  double server_mtt_loss = kNaN;
  if (cfg.algorithm == Algorithm::fedptr_s && t > cfg.window_m &&
      state.server_window.size() >= 2) {
    if (mtt_due(cfg.mtt_frequency, t, state.server_mtt_updates)) {
      auto span = state.server_window.span();
      auto res = mtt_update(state.spec, *state.server_aux, span->first,
                            span->second, cfg.mtt);
      if (res.skipped) {
        ++metrics.skipped;
      } else {
        state.server_aux = std::move(res.aux);
        ++state.server_mtt_updates;
        server_mtt_loss = res.losses.back();
      }
    }
    server_tilde = project_trajectory(state.spec, w_t, *state.server_aux,
                                      cfg.projection_steps, cfg.projection_lr)
                       .values;
    server_lambda = cfg.base_lambda;
  }

  const bool client_side = cfg.algorithm == Algorithm::fedptr ||
                           cfg.algorithm == Algorithm::distill_augment;
  if (client_side) {
    // The orchestrator is the single writer of client windows.
    for (std::size_t i : participants) state.clients[i].window.push(t, w_t);
  }

  auto run_client = [&](std::size_t i) -> ClientOutcome {
    ClientOutcome out;
    out.local = w_t;
    out.weight = static_cast<double>(partition.client_indices[i].size());
    if (partition.client_indices[i].empty()) return out;  // weight 0

    Batch shard = data.gather(partition.client_indices[i]);
    ParamVector reference = w_t;
    double lambda = 0.0;

    switch (cfg.algorithm) {
      case Algorithm::fedavg:
        break;
      case Algorithm::fedprox:
        // Shares the warm-up gate so the fedptr degenerations are exact.
        if (t > cfg.window_m) lambda = cfg.base_lambda;
        break;
      case Algorithm::fedptr:
      case Algorithm::distill_augment: {
        const ClientState& cs = state.clients[i];
        AuxiliaryDataset aux = cs.aux;
        if (t > cfg.window_m && cs.window.size() >= 2) {
          if (mtt_due(cfg.mtt_frequency, t, cs.mtt_updates)) {
            auto span = cs.window.span();
            auto res =
                mtt_update(state.spec, aux, span->first, span->second, cfg.mtt);
            if (res.skipped) {
              ++out.mtt_skips;
            } else {
              aux = res.aux;
              ++out.mtt_runs;
              out.mtt_final_loss = res.losses.back();
            }
            out.new_aux = aux;
          }
          if (cfg.algorithm == Algorithm::fedptr) {
            auto tilde = project_trajectory(state.spec, w_t, aux,
                                            cfg.projection_steps,
                                            cfg.projection_lr);
            out.tilde = tilde.values;
            reference = std::move(tilde);
          } else {
            // Appendix-style naive variant: train FedProx on the shard
            // augmented with the current auxiliary rows.
            Eigen::Index n0 = shard.features.rows();
            shard.features.conservativeResize(n0 + aux.features.rows(),
                                              Eigen::NoChange);
            shard.features.bottomRows(aux.features.rows()) = aux.features;
            shard.labels.conservativeResize(n0 + aux.labels.size());
            shard.labels.tail(aux.labels.size()) = aux.labels;
          }
          lambda = cfg.base_lambda;
        }
        break;
      }
      case Algorithm::fedptr_s:
        if (server_tilde) {
          reference = w_t.with_values(*server_tilde);
          out.tilde = *server_tilde;
        }
        lambda = server_lambda;
        break;
    }

    if (cfg.probe_mode) lambda = 0.0;

    ProxSpec prox = lambda > 0.0
                        ? make_prox(w_t, std::move(reference), lambda,
                                    cfg.adaptive_lambda)
                        : make_prox(w_t, w_t, 0.0, false);
    if (lambda > 0.0 && cfg.adaptive_lambda) {
      for (std::size_t j = 0; j < prox.per_layer_lambda.size(); ++j) {
        double diff = (w_t.layer(j) - prox.reference.layer(j)).norm();
        if (diff > 0.0)
          out.adaptive_err =
              std::max(out.adaptive_err,
                       std::abs(prox.per_layer_lambda[j] * diff - lambda));
      }
    }

    auto solved = local_solve(state.spec, w_t, shard, prox, cfg.solver,
                              rng::mix(cfg.seed, i,
                                       static_cast<std::uint64_t>(t)));
    out.local = std::move(solved.params);
    out.gamma = solved.gamma;
    return out;
  };

  std::vector<ClientOutcome> outcomes(participants.size());
  if (cfg.threads > 1 && participants.size() > 1) {
    std::vector<std::future<ClientOutcome>> futures;
    futures.reserve(participants.size());
    for (std::size_t p = 0; p < participants.size(); ++p)
      futures.push_back(std::async(std::launch::async, run_client,
                                   participants[p]));
    for (std::size_t p = 0; p < participants.size(); ++p)
      outcomes[p] = futures[p].get();
  } else {
    for (std::size_t p = 0; p < participants.size(); ++p)
      outcomes[p] = run_client(participants[p]);
  }

  // Commit client-side auxiliary updates in index order.
  double mtt_loss_sum = std::isnan(server_mtt_loss) ? 0.0 : server_mtt_loss;
  int mtt_loss_count = std::isnan(server_mtt_loss) ? 0 : 1;
  std::vector<ParamVector> locals;
  std::vector<double> weights;
  locals.reserve(outcomes.size());
  weights.reserve(outcomes.size());
  for (std::size_t p = 0; p < participants.size(); ++p) {
    auto& out = outcomes[p];
    if (out.new_aux) state.clients[participants[p]].aux = *out.new_aux;
    if (!state.clients.empty())
      state.clients[participants[p]].mtt_updates += out.mtt_runs;
    state.client_mtt_updates += out.mtt_runs;
    metrics.skipped += out.mtt_skips;
    if (!std::isnan(out.mtt_final_loss)) {
      mtt_loss_sum += out.mtt_final_loss;
      ++mtt_loss_count;
    }
    metrics.adaptive_identity_err =
        std::max(metrics.adaptive_identity_err, out.adaptive_err);
    locals.push_back(std::move(out.local));
    weights.push_back(out.weight);
  }
  if (mtt_loss_count > 0)
    metrics.mtt_loss = mtt_loss_sum / static_cast<double>(mtt_loss_count);

  ParamVector w_next = aggregate(locals, weights);

  // Similarity probes against the realized global step.
  double cos_aux_sum = 0.0, cos_local_sum = 0.0;
  int cos_aux_n = 0, cos_local_n = 0;
  double gamma_sum = 0.0;
  int gamma_n = 0;
  for (std::size_t p = 0; p < participants.size(); ++p) {
    const auto& out = outcomes[p];
    if (weights[p] == 0.0) continue;
    auto probe = similarity_probe(w_t.values, w_next.values, out.tilde,
                                  locals[p].values);
    if (probe.cos_aux) {
      cos_aux_sum += *probe.cos_aux;
      ++cos_aux_n;
    }
    if (probe.cos_local) {
      cos_local_sum += *probe.cos_local;
      ++cos_local_n;
    }
    if (out.gamma) {
      gamma_sum += *out.gamma;
      ++gamma_n;
    }
  }
  if (cos_aux_n > 0) metrics.cos_aux = cos_aux_sum / cos_aux_n;
  if (cos_local_n > 0) metrics.cos_local = cos_local_sum / cos_local_n;
  if (gamma_n > 0) metrics.gamma_mean = gamma_sum / gamma_n;

  state.global_model = std::move(w_next);
  state.round = t + 1;

  metrics.train_loss = forward_loss(state.spec, state.global_model,
                                    data.as_batch());
  metrics.grad_norm =
      grad(state.spec, state.global_model, data.as_batch()).values.norm();
  return metrics;
}

ExperimentResult run_experiment(const ModelSpec& spec, const FedConfig& cfg,
                                const Dataset& data,
                                const ClientPartition& partition,
                                const Dataset& test) {
  FedState state = init_fed_state(spec, cfg, data, partition);
  ExperimentResult result;
  result.metrics.reserve(static_cast<std::size_t>(cfg.rounds));
  for (int t = 0; t < cfg.rounds; ++t) {
    RoundMetrics m = run_round(state, cfg, data, partition);
    m.test_acc =
        accuracy(spec, state.global_model, test.features, test.labels);
    if (!std::isfinite(m.train_loss))
      throw std::runtime_error("run_experiment: non-finite loss at round " +
                               std::to_string(t));
    result.metrics.push_back(m);
  }
  std::size_t tail = std::min<std::size_t>(5, result.metrics.size());
  double acc = 0.0;
  for (std::size_t i = result.metrics.size() - tail; i < result.metrics.size();
       ++i)
    acc += result.metrics[i].test_acc;
  result.last5_acc = acc / static_cast<double>(tail);
  result.final_model = state.global_model;
  for (const auto& cs : state.clients) result.final_client_aux.push_back(cs.aux);
  result.final_server_aux = state.server_aux;
  result.client_mtt_updates = state.client_mtt_updates;
  result.server_mtt_updates = state.server_mtt_updates;
  return result;
}

}  // namespace fedptr
