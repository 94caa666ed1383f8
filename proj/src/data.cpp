#include "fedptr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fedptr/rng.hpp"

namespace fedptr {

Batch Dataset::gather(const std::vector<Eigen::Index>& indices) const {
  Batch b;
  b.features.resize(static_cast<Eigen::Index>(indices.size()), dim());
  b.labels.resize(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    b.features.row(static_cast<Eigen::Index>(i)) = features.row(indices[i]);
    b.labels(static_cast<Eigen::Index>(i)) = labels(indices[i]);
  }
  return b;
}

Eigen::Index ClientPartition::total_assigned() const {
  Eigen::Index total = 0;
  for (const auto& idx : client_indices)
    total += static_cast<Eigen::Index>(idx.size());
  return total;
}

ClientPartition dirichlet_partition(const Dataset& data, std::size_t n_clients,
                                    double alpha, std::uint64_t seed) {
  if (alpha <= 0.0) throw std::invalid_argument("dirichlet_partition: alpha");
  if (n_clients < 1)
    throw std::invalid_argument("dirichlet_partition: n_clients");

  // Class -> sample indices, in dataset order.
  std::vector<std::vector<Eigen::Index>> by_class(
      static_cast<std::size_t>(data.num_classes));
  for (Eigen::Index i = 0; i < data.size(); ++i)
    by_class[static_cast<std::size_t>(data.labels(i))].push_back(i);

  auto eng = rng::stream(seed, rng::Tag::partition);
  std::gamma_distribution<double> gamma(alpha, 1.0);

  ClientPartition part;
  part.client_indices.assign(n_clients, {});

  for (std::size_t k = 0; k < by_class.size(); ++k) {
    const auto& pool = by_class[k];
    if (pool.empty()) continue;
    const auto c_k = static_cast<Eigen::Index>(pool.size());

    // p ~ Dir_n(alpha) via normalized gammas.
    std::vector<double> p(n_clients);
    double sum = 0.0;
    for (auto& pj : p) {
      pj = gamma(eng);
      sum += pj;
    }
    if (sum <= 0.0) {
      // All gamma draws underflowed (tiny alpha); dump the class on one
      // deterministic pseudo-random client instead.
      std::fill(p.begin(), p.end(), 0.0);
      p[eng() % n_clients] = 1.0;
      sum = 1.0;
    }
    for (auto& pj : p) pj /= sum;

    // floor(p_j * c_k) each, then the remainder by descending fractional
    // part (ties by client index). Conserves every sample.
    std::vector<Eigen::Index> counts(n_clients);
    std::vector<std::pair<double, std::size_t>> frac(n_clients);
    Eigen::Index assigned = 0;
    for (std::size_t j = 0; j < n_clients; ++j) {
      double exact = p[j] * static_cast<double>(c_k);
      counts[j] = static_cast<Eigen::Index>(std::floor(exact));
      frac[j] = {exact - std::floor(exact), j};
      assigned += counts[j];
    }
    std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (Eigen::Index r = 0; r < c_k - assigned; ++r)
      ++counts[frac[static_cast<std::size_t>(r)].second];

    Eigen::Index pos = 0;
    for (std::size_t j = 0; j < n_clients; ++j) {
      for (Eigen::Index r = 0; r < counts[j]; ++r)
        part.client_indices[j].push_back(pool[static_cast<std::size_t>(pos++)]);
    }
  }

  for (std::size_t j = 0; j < n_clients; ++j) {
    if (part.client_indices[j].empty())
      part.warnings.push_back("client " + std::to_string(j) +
                              " received zero samples");
  }
  return part;
}

Dataset gen_synthetic_mixture(Eigen::Index n_per_class, int num_classes,
                              Eigen::Index dim, double separation,
                              std::uint64_t seed) {
  if (n_per_class < 1 || num_classes < 1 || dim < 1)
    throw std::invalid_argument("gen_synthetic_mixture: counts must be >= 1");

  auto eng = rng::stream(seed, rng::Tag::dataset);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Class means: random unit directions scaled to `separation`.
  Matrix means(num_classes, dim);
  for (int k = 0; k < num_classes; ++k) {
    Vector u(dim);
    for (Eigen::Index j = 0; j < dim; ++j) u(j) = normal(eng);
    double nrm = u.norm();
    if (nrm == 0.0) nrm = 1.0;
    means.row(k) = (separation / nrm) * u.transpose();
  }

  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(n_per_class * num_classes, dim);
  out.labels.resize(n_per_class * num_classes);
  Eigen::Index row = 0;
  for (int k = 0; k < num_classes; ++k) {
    for (Eigen::Index i = 0; i < n_per_class; ++i, ++row) {
      for (Eigen::Index j = 0; j < dim; ++j)
        out.features(row, j) = means(k, j) + normal(eng);
      out.labels(row) = k;
    }
  }
  return out;
}

Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv_dataset: cannot open " + path);

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  Eigen::Index width = -1;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    bool first = true;
    int label = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
        if (first) {
          label = static_cast<int>(v);
          if (v != static_cast<double>(label) || label < 0)
            throw std::invalid_argument(cell);
          first = false;
        } else {
          vals.push_back(v);
        }
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv_dataset: malformed value '" + cell +
                                 "' at line " + std::to_string(lineno));
      }
    }
    if (first)
      throw std::runtime_error("load_csv_dataset: empty row at line " +
                               std::to_string(lineno));
    if (width < 0) width = static_cast<Eigen::Index>(vals.size());
    if (static_cast<Eigen::Index>(vals.size()) != width)
      throw std::runtime_error("load_csv_dataset: width mismatch at line " +
                               std::to_string(lineno));
    rows.push_back(std::move(vals));
    labels.push_back(label);
  }
  if (rows.empty()) throw std::runtime_error("load_csv_dataset: empty file");

  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), width);
  out.labels.resize(static_cast<Eigen::Index>(rows.size()));
  int max_label = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index j = 0; j < width; ++j)
      out.features(static_cast<Eigen::Index>(i), j) =
          rows[i][static_cast<std::size_t>(j)];
    out.labels(static_cast<Eigen::Index>(i)) = labels[i];
    max_label = std::max(max_label, labels[i]);
  }
  out.num_classes = max_label + 1;
  return out;
}

void save_csv_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv_dataset: cannot open " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    out << data.labels(i);
    for (Eigen::Index j = 0; j < data.dim(); ++j)
      out << ',' << data.features(i, j);
    out << '\n';
  }
}

AuxiliaryDataset init_auxiliary(const std::optional<Batch>& local,
                                int num_classes, Eigen::Index per_class,
                                Eigen::Index dim, AuxInitMode mode,
                                std::uint64_t seed, double beta_init) {
  if (per_class < 1) throw std::invalid_argument("init_auxiliary: per_class");
  if (mode == AuxInitMode::client && !local)
    throw std::invalid_argument(
        "init_auxiliary: client mode requires local data");

  auto eng = rng::stream(seed, rng::Tag::aux_init);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Local sample indices per class (client mode only).
  std::vector<std::vector<Eigen::Index>> by_class(
      static_cast<std::size_t>(num_classes));
  if (mode == AuxInitMode::client) {
    for (Eigen::Index i = 0; i < local->size(); ++i)
      by_class[static_cast<std::size_t>(local->labels(i))].push_back(i);
  }

  AuxiliaryDataset aux;
  aux.beta = beta_init;
  aux.features.resize(per_class * num_classes, dim);
  aux.labels.resize(per_class * num_classes);
  Eigen::Index row = 0;
  for (int k = 0; k < num_classes; ++k) {
    const auto& pool = by_class[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < per_class; ++i, ++row) {
      aux.labels(row) = k;
      if (mode == AuxInitMode::client && !pool.empty()) {
        // Real sample, drawn with replacement.
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        aux.features.row(row) = local->features.row(pool[pick(eng)]);
      } else {
        for (Eigen::Index j = 0; j < dim; ++j)
          aux.features(row, j) = normal(eng);
      }
    }
  }
  return aux;
}

double mean_label_entropy(const Dataset& data, const ClientPartition& part,
                          int num_classes) {
  double total = 0.0;
  for (const auto& idx : part.client_indices) {
    if (idx.empty()) continue;
    std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
    for (auto i : idx) ++counts[static_cast<std::size_t>(data.labels(i))];
    double h = 0.0;
    for (double c : counts) {
      if (c > 0.0) {
        double p = c / static_cast<double>(idx.size());
        h -= p * std::log(p);
      }
    }
    total += h;
  }
  return total / static_cast<double>(part.n_clients());
}

}  // namespace fedptr
