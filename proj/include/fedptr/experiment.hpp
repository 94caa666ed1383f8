#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedptr/data.hpp"
#include "fedptr/federation.hpp"

namespace fedptr {

struct SyntheticSource {
  Eigen::Index n_per_class = 500;
  int num_classes = 10;
  Eigen::Index dim = 20;
  double separation = 3.0;
  std::uint64_t data_seed = 1;
  Eigen::Index test_n_per_class = 200;
};

struct CsvSource {
  std::string train;
  std::string test;
};

struct ModelFileSpec {
  std::vector<Eigen::Index> hidden_layers = {16};
  Activation activation = Activation::tanh;
};

// Parsed experiment configuration file. Unknown keys are rejected.
struct ExperimentFile {
  FedConfig fed;
  ModelFileSpec model;
  std::optional<SyntheticSource> synthetic;  // exactly one source set
  std::optional<CsvSource> csv;
  double partition_alpha = 0.01;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "out";
};

ExperimentFile parse_experiment_file(const nlohmann::json& doc);
ExperimentFile load_experiment_file(const std::string& path);
nlohmann::json experiment_to_json(const ExperimentFile& ef);

struct BuiltProblem {
  Dataset train;
  Dataset test;
  ModelSpec spec;
  ClientPartition partition;  // built from (partition_alpha, run seed)
};
BuiltProblem build_problem(const ExperimentFile& ef, std::uint64_t seed);

// Executes one seed; writes metrics CSV, plots, aux snapshots.
ExperimentResult run_one_seed(const ExperimentFile& ef, std::uint64_t seed,
                              const std::string& out_dir,
                              const std::string& metrics_name, bool quiet);

// `run` subcommand: all seeds, summary.json, stable directory layout.
int run_experiment_file(const ExperimentFile& ef, const std::string& out_dir,
                        bool quiet);

struct CompareRow {
  std::string label;
  double mean_last5 = 0.0;
  double std_last5 = 0.0;
  std::vector<double> per_seed;
};

// Runs each config over its seed list; configs may differ only in the
// declared sweep fields.
std::vector<CompareRow> compare_suite(const std::vector<ExperimentFile>& files,
                                      bool quiet);
void write_compare_csv(const std::string& path,
                       const std::vector<CompareRow>& rows);

}  // namespace fedptr
