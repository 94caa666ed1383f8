#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "fedptr/diagnostics.hpp"
#include "fedptr/experiment.hpp"
#include "fedptr/io.hpp"
#include "fedptr/trajectory.hpp"

namespace {

using namespace fedptr;

ExperimentFile load_with_overrides(const std::string& config_path,
                                   std::int64_t seed_override,
                                   const std::string& out_override,
                                   int threads_override) {
  ExperimentFile ef = load_experiment_file(config_path);
  if (seed_override >= 0)
    ef.seeds = {static_cast<std::uint64_t>(seed_override)};
  if (!out_override.empty()) ef.output_dir = out_override;
  if (threads_override > 0) ef.fed.threads = threads_override;
  return ef;
}

// Finite-difference oracle suite over randomized small instances; the
// same checks the test suite runs, packaged for the command line.
int selftest() {
  std::mt19937_64 eng(2024);
  std::normal_distribution<double> nd;
  int failures = 0;

  auto check = [&](bool ok, const std::string& what) {
    std::cout << (ok ? "PASS " : "FAIL ") << what << "\n";
    if (!ok) ++failures;
  };

  double worst_grad = 0.0, worst_hvp = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelSpec spec{3 + trial % 3,
                   {4, 2 + trial % 3},
                   trial % 2 ? Activation::softplus : Activation::tanh,
                   2 + trial % 3};
    auto w = init_params(spec, 100 + static_cast<std::uint64_t>(trial), 0.5);
    Batch b;
    b.features.resize(6, spec.input_dim);
    b.labels.resize(6);
    for (Eigen::Index i = 0; i < 6; ++i) {
      for (Eigen::Index j = 0; j < spec.input_dim; ++j)
        b.features(i, j) = nd(eng);
      b.labels(i) = static_cast<int>(i % spec.num_classes);
    }
    auto g = grad(spec, w, b);
    const double h = 1e-4;
    Vector fd_grad(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      auto wp = w, wm = w;
      wp.values(i) += h;
      wm.values(i) -= h;
      fd_grad(i) = (forward_loss(spec, wp, b) - forward_loss(spec, wm, b)) /
                   (2 * h);
    }
    worst_grad = std::max(worst_grad, (fd_grad - g.values).norm() /
                                          std::max(1e-12, fd_grad.norm()));
    Vector v(w.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = nd(eng);
    auto hv = hvp(spec, w, b, w.with_values(v));
    auto wp = w, wm = w;
    wp.values += h * v;
    wm.values -= h * v;
    Vector fd = (grad(spec, wp, b).values - grad(spec, wm, b).values) / (2 * h);
    worst_hvp = std::max(worst_hvp, (fd - hv.values).norm() /
                                        std::max(1e-12, fd.norm()));
  }
  check(worst_grad <= 1e-5, "gradient vs finite differences (rel err " +
                                format_double(worst_grad) + ")");
  check(worst_hvp <= 1e-4, "hvp vs finite differences (rel err " +
                               format_double(worst_hvp) + ")");

  // Meta-gradient against finite differences of the composed objective.
  double worst_meta = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    ModelSpec spec{2, {3, 2}, Activation::tanh, 2};
    auto w_start = init_params(spec, 500 + static_cast<std::uint64_t>(trial),
                               0.3);
    auto w_end = w_start;
    for (Eigen::Index i = 0; i < w_end.size(); ++i)
      w_end.values(i) += 0.1 * nd(eng);
    AuxiliaryDataset aux;
    aux.features.resize(3, 2);
    for (Eigen::Index i = 0; i < 3; ++i)
      for (Eigen::Index j = 0; j < 2; ++j) aux.features(i, j) = nd(eng);
    aux.labels.resize(3);
    aux.labels << 0, 1, 0;
    aux.beta = 0.05;
    const int R = 3;
    auto mg = meta_gradient(spec, aux, w_start, w_end, R);
    auto composed = [&](const AuxiliaryDataset& a) {
      return mtt_loss(unroll_inner(spec, a, w_start, R), w_start, w_end);
    };
    const double h = 1e-4;
    for (Eigen::Index i = 0; i < 3; ++i) {
      for (Eigen::Index j = 0; j < 2; ++j) {
        auto ap = aux, am = aux;
        ap.features(i, j) += h;
        am.features(i, j) -= h;
        double fd = (composed(ap) - composed(am)) / (2 * h);
        worst_meta =
            std::max(worst_meta, std::abs(fd - mg.d_features(i, j)) /
                                     std::max(1e-5, std::abs(fd)));
      }
    }
    auto bp = aux, bm = aux;
    bp.beta += h;
    bm.beta -= h;
    double fd_beta = (composed(bp) - composed(bm)) / (2 * h);
    worst_meta = std::max(worst_meta, std::abs(fd_beta - mg.d_beta) /
                                          std::max(1e-5, std::abs(fd_beta)));
  }
  check(worst_meta <= 1e-3, "meta-gradient vs finite differences (rel err " +
                                format_double(worst_meta) + ")");

  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedPTR federated-learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, plot_path, plot_out, cols = "test_acc";
  std::int64_t seed_override = -1;
  int threads_override = 0;
  bool quiet = false, bar_mode = false;
  std::vector<std::string> compare_paths;
  std::string compare_out = "compare.csv";

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "experiment JSON file")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed_override, "override the config seed list");
    cmd->add_option("--out", out_dir, "override the output directory");
    cmd->add_option("--threads", threads_override,
                    "parallel client solves per round");
    cmd->add_flag("--quiet", quiet, "suppress progress output");
  };

  auto* run_cmd = app.add_subcommand("run", "execute an experiment");
  add_common(run_cmd);

  auto* probe_cmd = app.add_subcommand(
      "probe", "gradient-similarity probe (regularizer disabled)");
  add_common(probe_cmd);

  auto* part_cmd = app.add_subcommand(
      "partition", "write the client partition and its label statistics");
  add_common(part_cmd);

  auto* plot_cmd = app.add_subcommand("plot", "render a metrics CSV as SVG");
  plot_cmd->add_option("metrics", plot_path, "metrics CSV")
      ->required()
      ->check(CLI::ExistingFile);
  plot_cmd->add_option("--cols", cols, "comma-separated column names");
  plot_cmd->add_option("-o,--output", plot_out, "output SVG path");
  plot_cmd->add_flag("--bar", bar_mode, "bar chart of the final row");

  auto* cmp_cmd = app.add_subcommand("compare",
                                     "run several configs, tabulate last-5 "
                                     "accuracies");
  cmp_cmd->add_option("configs", compare_paths, "experiment JSON files")
      ->required()
      ->check(CLI::ExistingFile);
  cmp_cmd->add_option("--out", compare_out, "comparison CSV path");
  cmp_cmd->add_flag("--quiet", quiet, "suppress progress output");

  auto* selftest_cmd =
      app.add_subcommand("selftest", "finite-difference oracle suite");
  (void)selftest_cmd;

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed() || probe_cmd->parsed()) {
      ExperimentFile ef = load_with_overrides(config_path, seed_override,
                                              out_dir, threads_override);
      if (probe_cmd->parsed()) ef.fed.probe_mode = true;
      return run_experiment_file(ef, ef.output_dir, quiet);
    }
    if (part_cmd->parsed()) {
      ExperimentFile ef = load_with_overrides(config_path, seed_override,
                                              out_dir, threads_override);
      BuiltProblem prob = build_problem(ef, ef.seeds.front());
      std::filesystem::create_directories(ef.output_dir);
      write_partition_csv(ef.output_dir + "/partition.csv", prob.partition);
      write_partition_stats(ef.output_dir + "/partition_stats.json",
                            prob.train, prob.partition);
      for (const auto& warning : prob.partition.warnings)
        std::cerr << "warning: " << warning << "\n";
      return 0;
    }
    if (plot_cmd->parsed()) {
      CsvTable table = read_csv_table(plot_path);
      if (plot_out.empty())
        plot_out = plot_path.substr(0, plot_path.find_last_of('.')) + ".svg";
      std::vector<std::string> names;
      std::stringstream ss(cols);
      std::string name;
      while (std::getline(ss, name, ',')) names.push_back(name);
      if (bar_mode) {
        if (table.rows.empty()) throw std::runtime_error("plot: no rows");
        std::vector<double> values;
        for (const auto& n : names)
          values.push_back(table.rows.back()[table.column_index(n)]);
        svg_bar_chart(plot_out, names, values);
      } else {
        std::vector<double> x = table.column(table.columns.front());
        std::map<std::string, std::vector<double>> series;
        for (const auto& n : names) series[n] = table.column(n);
        svg_line_chart(plot_out, x, series, table.columns.front());
      }
      if (!quiet) std::cout << "wrote " << plot_out << "\n";
      return 0;
    }
    if (cmp_cmd->parsed()) {
      std::vector<ExperimentFile> files;
      for (const auto& path : compare_paths)
        files.push_back(load_experiment_file(path));
      auto rows = compare_suite(files, quiet);
      write_compare_csv(compare_out, rows);
      if (!quiet) std::cout << "wrote " << compare_out << "\n";
      return 0;
    }
    if (selftest_cmd->parsed()) return selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
