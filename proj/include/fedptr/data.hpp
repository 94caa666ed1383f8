#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedptr/model.hpp"
#include "fedptr/types.hpp"

namespace fedptr {

struct Dataset {
  Matrix features;         // M x d
  Eigen::VectorXi labels;  // values in [0, num_classes)
  int num_classes = 0;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  Batch gather(const std::vector<Eigen::Index>& indices) const;
  Batch as_batch() const { return {features, labels}; }
};

// Per-client index sets over a master dataset. Zero-sample clients are
// allowed; they show up in `warnings` and carry weight 0 in aggregation.
struct ClientPartition {
  std::vector<std::vector<Eigen::Index>> client_indices;
  std::vector<std::string> warnings;

  std::size_t n_clients() const { return client_indices.size(); }
  Eigen::Index client_size(std::size_t i) const {
    return static_cast<Eigen::Index>(client_indices[i].size());
  }
  Eigen::Index total_assigned() const;
};

// Learnable features with fixed labels and a learnable inner step size.
struct AuxiliaryDataset {
  Matrix features;         // s x d
  Eigen::VectorXi labels;  // fixed after initialization
  double beta = 0.01;

  Eigen::Index size() const { return features.rows(); }
};

enum class AuxInitMode { client, server };

ClientPartition dirichlet_partition(const Dataset& data, std::size_t n_clients,
                                    double alpha, std::uint64_t seed);

Dataset gen_synthetic_mixture(Eigen::Index n_per_class, int num_classes,
                              Eigen::Index dim, double separation,
                              std::uint64_t seed);

Dataset load_csv_dataset(const std::string& path);
void save_csv_dataset(const Dataset& data, const std::string& path);

AuxiliaryDataset init_auxiliary(const std::optional<Batch>& local,
                                int num_classes, Eigen::Index per_class,
                                Eigen::Index dim, AuxInitMode mode,
                                std::uint64_t seed, double beta_init = 0.01);

// Mean over clients of the label-distribution entropy (nats); empty
// clients contribute zero.
double mean_label_entropy(const Dataset& data, const ClientPartition& part,
                          int num_classes);

}  // namespace fedptr
