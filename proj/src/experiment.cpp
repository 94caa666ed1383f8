#include "fedptr/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "fedptr/io.hpp"
#include "fedptr/rng.hpp"

namespace fedptr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key))
      throw std::runtime_error("config: unknown key '" + key + "' in " +
                               where);
  }
}

template <typename T>
void maybe(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) into = obj.at(key).get<T>();
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  if (s == "relu") return Activation::relu;
  throw std::runtime_error("config: unknown activation '" + s + "'");
}

std::string activation_to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
    case Activation::relu: return "relu";
  }
  throw std::logic_error("unknown activation");
}

}  // namespace

ExperimentFile parse_experiment_file(const json& doc) {
  static const std::set<std::string> kTop = {
      "algorithm",      "rounds",        "n_clients",
      "participation_ratio", "window",   "projection_steps",
      "projection_lr",  "base_lambda",   "adaptive_lambda",
      "mtt",            "mtt_frequency", "aux_per_class",
      "beta_init",      "solver",        "probe",
      "threads",        "model",         "dataset",
      "partition",      "seeds",         "output_dir",
      "name"};
  reject_unknown(doc, kTop, "top level");

  ExperimentFile ef;
  if (doc.contains("algorithm"))
    ef.fed.algorithm = algorithm_from_string(doc.at("algorithm"));
  maybe(doc, "rounds", ef.fed.rounds);
  maybe(doc, "n_clients", ef.fed.n_clients);
  maybe(doc, "participation_ratio", ef.fed.participation_ratio);
  maybe(doc, "window", ef.fed.window_m);
  maybe(doc, "projection_steps", ef.fed.projection_steps);
  maybe(doc, "projection_lr", ef.fed.projection_lr);
  maybe(doc, "base_lambda", ef.fed.base_lambda);
  maybe(doc, "adaptive_lambda", ef.fed.adaptive_lambda);
  maybe(doc, "mtt_frequency", ef.fed.mtt_frequency);
  maybe(doc, "aux_per_class", ef.fed.aux_per_class);
  maybe(doc, "beta_init", ef.fed.beta_init);
  maybe(doc, "probe", ef.fed.probe_mode);
  maybe(doc, "threads", ef.fed.threads);

  if (doc.contains("mtt")) {
    const json& m = doc.at("mtt");
    reject_unknown(m, {"outer_steps", "inner_steps", "aux_lr"}, "mtt");
    maybe(m, "outer_steps", ef.fed.mtt.outer_steps);
    maybe(m, "inner_steps", ef.fed.mtt.inner_steps);
    maybe(m, "aux_lr", ef.fed.mtt.aux_lr);
  }
  if (doc.contains("solver")) {
    const json& s = doc.at("solver");
    reject_unknown(s, {"epochs", "batch_size", "lr", "momentum"}, "solver");
    maybe(s, "epochs", ef.fed.solver.epochs);
    maybe(s, "batch_size", ef.fed.solver.batch_size);
    maybe(s, "lr", ef.fed.solver.lr);
    maybe(s, "momentum", ef.fed.solver.momentum);
  }
  if (doc.contains("model")) {
    const json& m = doc.at("model");
    reject_unknown(m, {"hidden_layers", "activation"}, "model");
    maybe(m, "hidden_layers", ef.model.hidden_layers);
    if (m.contains("activation"))
      ef.model.activation = activation_from_string(m.at("activation"));
  }
  if (doc.contains("dataset")) {
    const json& d = doc.at("dataset");
    std::string type = d.value("type", "synthetic");
    if (type == "synthetic") {
      reject_unknown(d,
                     {"type", "n_per_class", "num_classes", "dim",
                      "separation", "data_seed", "test_n_per_class"},
                     "dataset");
      SyntheticSource s;
      maybe(d, "n_per_class", s.n_per_class);
      maybe(d, "num_classes", s.num_classes);
      maybe(d, "dim", s.dim);
      maybe(d, "separation", s.separation);
      maybe(d, "data_seed", s.data_seed);
      maybe(d, "test_n_per_class", s.test_n_per_class);
      ef.synthetic = s;
    } else if (type == "csv") {
      reject_unknown(d, {"type", "train", "test"}, "dataset");
      CsvSource s;
      s.train = d.at("train").get<std::string>();
      s.test = d.at("test").get<std::string>();
      ef.csv = s;
    } else {
      throw std::runtime_error("config: unknown dataset type '" + type + "'");
    }
  } else {
    ef.synthetic = SyntheticSource{};
  }
  if (doc.contains("partition")) {
    const json& p = doc.at("partition");
    reject_unknown(p, {"alpha"}, "partition");
    maybe(p, "alpha", ef.partition_alpha);
  }
  maybe(doc, "seeds", ef.seeds);
  maybe(doc, "output_dir", ef.output_dir);
  if (ef.seeds.empty()) throw std::runtime_error("config: empty seed list");

  // Env override for quick reruns.
  if (const char* env = std::getenv("FEDPTR_SEED")) {
    ef.seeds = {static_cast<std::uint64_t>(std::stoull(env))};
  }
  return ef;
}

ExperimentFile load_experiment_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("config: invalid JSON in " + path + ": " +
                             e.what());
  }
  return parse_experiment_file(doc);
}

json experiment_to_json(const ExperimentFile& ef) {
  json doc;
  doc["algorithm"] = to_string(ef.fed.algorithm);
  doc["rounds"] = ef.fed.rounds;
  doc["n_clients"] = ef.fed.n_clients;
  doc["participation_ratio"] = ef.fed.participation_ratio;
  doc["window"] = ef.fed.window_m;
  doc["projection_steps"] = ef.fed.projection_steps;
  doc["projection_lr"] = ef.fed.projection_lr;
  doc["base_lambda"] = ef.fed.base_lambda;
  doc["adaptive_lambda"] = ef.fed.adaptive_lambda;
  doc["mtt"] = {{"outer_steps", ef.fed.mtt.outer_steps},
                {"inner_steps", ef.fed.mtt.inner_steps},
                {"aux_lr", ef.fed.mtt.aux_lr}};
  doc["mtt_frequency"] = ef.fed.mtt_frequency;
  doc["aux_per_class"] = ef.fed.aux_per_class;
  doc["beta_init"] = ef.fed.beta_init;
  doc["solver"] = {{"epochs", ef.fed.solver.epochs},
                   {"batch_size", ef.fed.solver.batch_size},
                   {"lr", ef.fed.solver.lr},
                   {"momentum", ef.fed.solver.momentum}};
  doc["probe"] = ef.fed.probe_mode;
  doc["model"] = {{"hidden_layers", ef.model.hidden_layers},
                  {"activation", activation_to_string(ef.model.activation)}};
  if (ef.synthetic) {
    doc["dataset"] = {{"type", "synthetic"},
                      {"n_per_class", ef.synthetic->n_per_class},
                      {"num_classes", ef.synthetic->num_classes},
                      {"dim", ef.synthetic->dim},
                      {"separation", ef.synthetic->separation},
                      {"data_seed", ef.synthetic->data_seed},
                      {"test_n_per_class", ef.synthetic->test_n_per_class}};
  } else {
    doc["dataset"] = {{"type", "csv"}, {"train", ef.csv->train},
                      {"test", ef.csv->test}};
  }
  doc["partition"] = {{"alpha", ef.partition_alpha}};
  doc["seeds"] = ef.seeds;
  doc["output_dir"] = ef.output_dir;
  return doc;
}

BuiltProblem build_problem(const ExperimentFile& ef, std::uint64_t seed) {
  BuiltProblem out;
  if (ef.synthetic) {
    const auto& s = *ef.synthetic;
    // One pool per class so train and test share the class means, then a
    // deterministic split (samples are exchangeable within a class).
    Dataset pool =
        gen_synthetic_mixture(s.n_per_class + s.test_n_per_class,
                              s.num_classes, s.dim, s.separation, s.data_seed);
    std::vector<Eigen::Index> train_idx, test_idx;
    for (int k = 0; k < s.num_classes; ++k) {
      Eigen::Index base = static_cast<Eigen::Index>(k) *
                          (s.n_per_class + s.test_n_per_class);
      for (Eigen::Index i = 0; i < s.n_per_class; ++i)
        train_idx.push_back(base + i);
      for (Eigen::Index i = 0; i < s.test_n_per_class; ++i)
        test_idx.push_back(base + s.n_per_class + i);
    }
    Batch train_b = pool.gather(train_idx), test_b = pool.gather(test_idx);
    out.train = Dataset{train_b.features, train_b.labels, s.num_classes};
    out.test = Dataset{test_b.features, test_b.labels, s.num_classes};
  } else {
    out.train = load_csv_dataset(ef.csv->train);
    out.test = load_csv_dataset(ef.csv->test);
    if (out.train.dim() != out.test.dim())
      throw std::runtime_error("dataset: train/test dimension mismatch");
  }

  out.spec.input_dim = out.train.dim();
  out.spec.num_classes = out.train.num_classes;
  out.spec.layer_sizes = ef.model.hidden_layers;
  out.spec.layer_sizes.push_back(out.train.num_classes);
  out.spec.activation = ef.model.activation;
  out.spec.check();

  out.partition =
      dirichlet_partition(out.train, ef.fed.n_clients, ef.partition_alpha,
                          seed);
  return out;
}

ExperimentResult run_one_seed(const ExperimentFile& ef, std::uint64_t seed,
                              const std::string& out_dir,
                              const std::string& metrics_name, bool quiet) {
  BuiltProblem prob = build_problem(ef, seed);
  FedConfig cfg = ef.fed;
  cfg.seed = seed;

  ExperimentResult result =
      run_experiment(prob.spec, cfg, prob.train, prob.partition, prob.test);

  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/plots");
  fs::create_directories(out_dir + "/aux_snapshots");
  write_metrics_csv(out_dir + "/" + metrics_name, result.metrics);

  std::vector<double> rounds, acc, loss, cos_aux, cos_local;
  for (const auto& m : result.metrics) {
    rounds.push_back(m.round);
    acc.push_back(m.test_acc);
    loss.push_back(m.train_loss);
    cos_aux.push_back(m.cos_aux);
    cos_local.push_back(m.cos_local);
  }
  std::string tag = "_seed" + std::to_string(seed);
  svg_line_chart(out_dir + "/plots/convergence" + tag + ".svg", rounds,
                 {{"test_acc", acc}, {"train_loss", loss}});
  bool any_cos = false;
  for (double v : cos_aux)
    if (!std::isnan(v)) any_cos = true;
  if (any_cos)
    svg_line_chart(out_dir + "/plots/similarity" + tag + ".svg", rounds,
                   {{"cos_aux", cos_aux}, {"cos_local", cos_local}});

  if (result.final_server_aux)
    write_aux_snapshot(out_dir + "/aux_snapshots/server_final" + tag,
                       *result.final_server_aux, cfg.rounds - 1);
  if (!result.final_client_aux.empty())
    write_aux_snapshot(out_dir + "/aux_snapshots/client0_final" + tag,
                       result.final_client_aux[0], cfg.rounds - 1);

  if (!quiet)
    std::cout << "seed " << seed << ": last5_acc=" << result.last5_acc
              << "\n";
  return result;
}

int run_experiment_file(const ExperimentFile& ef, const std::string& out_dir,
                        bool quiet) {
  fs::create_directories(out_dir);
  std::vector<double> per_seed;
  std::uint64_t train_hash = 0, test_hash = 0;
  for (std::size_t i = 0; i < ef.seeds.size(); ++i) {
    std::uint64_t seed = ef.seeds[i];
    std::string name = ef.seeds.size() == 1
                           ? "metrics.csv"
                           : "metrics_seed" + std::to_string(seed) + ".csv";
    auto result = run_one_seed(ef, seed, out_dir, name, quiet);
    per_seed.push_back(result.last5_acc);
    if (i == 0) {
      BuiltProblem prob = build_problem(ef, seed);
      train_hash = dataset_hash(prob.train);
      test_hash = dataset_hash(prob.test);
    }
  }

  double mean = 0.0;
  for (double v : per_seed) mean += v;
  mean /= static_cast<double>(per_seed.size());
  double var = 0.0;
  for (double v : per_seed) var += (v - mean) * (v - mean);
  double stddev = per_seed.size() > 1
                      ? std::sqrt(var / static_cast<double>(per_seed.size() - 1))
                      : 0.0;

  json summary;
  summary["config"] = experiment_to_json(ef);
  summary["seeds"] = ef.seeds;
  summary["last5_acc_per_seed"] = per_seed;
  summary["last5_acc"] = mean;
  summary["last5_acc_std"] = stddev;
  std::ostringstream th, eh;
  th << std::hex << train_hash;
  eh << std::hex << test_hash;
  summary["train_dataset_hash"] = th.str();
  summary["test_dataset_hash"] = eh.str();
  std::ofstream out(out_dir + "/summary.json");
  out << summary.dump(2) << '\n';

  if (!quiet)
    std::cout << "mean last5_acc " << mean << " +/- " << stddev << "\n";
  return 0;
}

std::vector<CompareRow> compare_suite(const std::vector<ExperimentFile>& files,
                                      bool quiet) {
  if (files.empty()) throw std::runtime_error("compare: no configs");

  // Configs may differ only in the sweep fields below.
  static const std::vector<std::string> kSweep = {
      "algorithm",      "base_lambda",   "adaptive_lambda",
      "mtt_frequency",  "aux_per_class", "projection_steps",
      "window",         "mtt",           "probe",
      "participation_ratio", "output_dir"};
  auto fixed_part = [](const ExperimentFile& ef) {
    json doc = experiment_to_json(ef);
    for (const auto& key : kSweep) doc.erase(key);
    return doc.dump();
  };
  const std::string reference = fixed_part(files[0]);
  for (std::size_t i = 1; i < files.size(); ++i) {
    if (fixed_part(files[i]) != reference)
      throw std::runtime_error(
          "compare: configs differ outside the sweep fields");
  }

  std::vector<CompareRow> rows;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto& ef = files[i];
    CompareRow row;
    std::ostringstream label;
    label << to_string(ef.fed.algorithm) << "/lambda=" << ef.fed.base_lambda
          << "/F=" << ef.fed.mtt_frequency << "/K=" << ef.fed.projection_steps;
    row.label = label.str();
    for (std::uint64_t seed : ef.seeds) {
      BuiltProblem prob = build_problem(ef, seed);
      FedConfig cfg = ef.fed;
      cfg.seed = seed;
      auto result =
          run_experiment(prob.spec, cfg, prob.train, prob.partition, prob.test);
      row.per_seed.push_back(result.last5_acc);
      if (!quiet)
        std::cout << row.label << " seed " << seed << ": "
                  << result.last5_acc << "\n";
    }
    double mean = 0.0;
    for (double v : row.per_seed) mean += v;
    mean /= static_cast<double>(row.per_seed.size());
    double var = 0.0;
    for (double v : row.per_seed) var += (v - mean) * (v - mean);
    row.mean_last5 = mean;
    row.std_last5 =
        row.per_seed.size() > 1
            ? std::sqrt(var / static_cast<double>(row.per_seed.size() - 1))
            : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_compare_csv(const std::string& path,
                       const std::vector<CompareRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_compare_csv: cannot open " + path);
  out << "config,mean_last5_acc,std_last5_acc,n_seeds\n";
  for (const auto& row : rows)
    out << row.label << ',' << format_double(row.mean_last5) << ','
        << format_double(row.std_last5) << ',' << row.per_seed.size() << '\n';
}

}  // namespace fedptr
