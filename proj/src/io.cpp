#include "fedptr/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fedptr {

const std::vector<std::string> kMetricsColumns = {
    "round",    "train_loss", "test_acc",      "grad_norm",
    "gamma_mean", "cos_aux",  "cos_local",     "mtt_loss",
    "skipped_flags", "adaptive_identity_err"};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<RoundMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  for (std::size_t i = 0; i < kMetricsColumns.size(); ++i)
    out << (i ? "," : "") << kMetricsColumns[i];
  out << '\n';
  for (const auto& m : metrics) {
    out << m.round << ',' << format_double(m.train_loss) << ','
        << format_double(m.test_acc) << ',' << format_double(m.grad_norm)
        << ',' << format_double(m.gamma_mean) << ','
        << format_double(m.cos_aux) << ',' << format_double(m.cos_local) << ','
        << format_double(m.mtt_loss) << ',' << m.skipped << ','
        << format_double(m.adaptive_identity_err) << '\n';
  }
}

std::size_t CsvTable::column_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end())
    throw std::runtime_error("CsvTable: no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> CsvTable::column(const std::string& name) const {
  std::size_t j = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[j]);
  return out;
}

CsvTable read_csv_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv_table: cannot open " + path);
  CsvTable table;
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("read_csv_table: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.columns.push_back(cell);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("read_csv_table: bad value '" + cell +
                                 "' at line " + std::to_string(lineno));
      }
    }
    if (row.size() != table.columns.size())
      throw std::runtime_error("read_csv_table: width mismatch at line " +
                               std::to_string(lineno));
    table.rows.push_back(std::move(row));
  }
  return table;
}

void write_partition_csv(const std::string& path,
                         const ClientPartition& partition) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("write_partition_csv: cannot open " + path);
  out << "client_id,sample_index\n";
  for (std::size_t i = 0; i < partition.n_clients(); ++i)
    for (auto idx : partition.client_indices[i])
      out << i << ',' << idx << '\n';
}

void write_partition_stats(const std::string& path, const Dataset& data,
                           const ClientPartition& partition) {
  nlohmann::json stats;
  stats["n_clients"] = partition.n_clients();
  stats["total_assigned"] = partition.total_assigned();
  stats["warnings"] = partition.warnings;
  nlohmann::json per_client = nlohmann::json::array();
  for (const auto& idx : partition.client_indices) {
    std::vector<Eigen::Index> counts(
        static_cast<std::size_t>(data.num_classes), 0);
    for (auto i : idx) ++counts[static_cast<std::size_t>(data.labels(i))];
    per_client.push_back(
        {{"size", idx.size()}, {"label_counts", counts}});
  }
  stats["clients"] = per_client;
  stats["mean_label_entropy"] =
      mean_label_entropy(data, partition, data.num_classes);
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("write_partition_stats: cannot open " + path);
  out << stats.dump(2) << '\n';
}

void write_aux_snapshot(const std::string& base_path,
                        const AuxiliaryDataset& aux, int round) {
  std::ofstream feat(base_path + ".csv");
  if (!feat)
    throw std::runtime_error("write_aux_snapshot: cannot open " + base_path);
  feat.precision(17);
  for (Eigen::Index i = 0; i < aux.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < aux.features.cols(); ++j)
      feat << (j ? "," : "") << aux.features(i, j);
    feat << '\n';
  }
  nlohmann::json side;
  side["round"] = round;
  side["beta"] = aux.beta;
  std::vector<int> labels(aux.labels.data(),
                          aux.labels.data() + aux.labels.size());
  side["labels"] = labels;
  std::ofstream meta(base_path + ".json");
  meta << side.dump(2) << '\n';
}

namespace {

struct Range {
  double lo = 0.0, hi = 1.0;
  void update(double v) {
    if (std::isnan(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

void svg_line_chart(const std::string& path, const std::vector<double>& x,
                    const std::map<std::string, std::vector<double>>& series,
                    const std::string& x_label) {
  const double W = 720, H = 440, ml = 60, mr = 160, mt = 20, mb = 45;
  Range xr{x.empty() ? 0 : x.front(), x.empty() ? 1 : x.front()};
  Range yr{0, 1e-12};
  for (double v : x) xr.update(v);
  for (const auto& [name, ys] : series)
    for (double v : ys) yr.update(v);
  if (xr.hi == xr.lo) xr.hi = xr.lo + 1;
  if (yr.hi == yr.lo) yr.hi = yr.lo + 1;

  auto sx = [&](double v) {
    return ml + (v - xr.lo) / (xr.hi - xr.lo) * (W - ml - mr);
  };
  auto sy = [&](double v) {
    return H - mb - (v - yr.lo) / (yr.hi - yr.lo) * (H - mt - mb);
  };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("svg_line_chart: cannot open " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
      << "' height='" << H << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  // Axes
  out << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr
      << "' y2='" << H - mb << "' stroke='black'/>\n";
  out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='"
      << H - mb << "' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    double yv = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    out << "<text x='" << ml - 8 << "' y='" << sy(yv) + 4
        << "' text-anchor='end' font-size='11'>" << format_double(yv)
        << "</text>\n";
    double xv = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    out << "<text x='" << sx(xv) << "' y='" << H - mb + 18
        << "' text-anchor='middle' font-size='11'>" << format_double(xv)
        << "</text>\n";
  }
  out << "<text x='" << (ml + W - mr) / 2 << "' y='" << H - 8
      << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n";

  int c = 0;
  double legend_y = mt + 12;
  for (const auto& [name, ys] : series) {
    const char* color = kPalette[c % 8];
    out << "<polyline fill='none' stroke='" << color
        << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < x.size() && i < ys.size(); ++i) {
      if (std::isnan(ys[i])) continue;
      out << sx(x[i]) << ',' << sy(ys[i]) << ' ';
    }
    out << "'/>\n";
    out << "<line x1='" << W - mr + 10 << "' y1='" << legend_y << "' x2='"
        << W - mr + 34 << "' y2='" << legend_y << "' stroke='" << color
        << "' stroke-width='2'/>\n";
    out << "<text x='" << W - mr + 40 << "' y='" << legend_y + 4
        << "' font-size='12'>" << name << "</text>\n";
    legend_y += 18;
    ++c;
  }
  out << "</svg>\n";
}

void svg_bar_chart(const std::string& path,
                   const std::vector<std::string>& labels,
                   const std::vector<double>& values) {
  const double W = 720, H = 440, ml = 60, mr = 20, mt = 20, mb = 60;
  Range yr{0, 1e-12};
  for (double v : values) yr.update(v);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("svg_bar_chart: cannot open " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
      << "' height='" << H << "'>\n";
  out << "<rect width='100%' height='100%' fill='white'/>\n";
  double span = W - ml - mr;
  double bw = span / std::max<std::size_t>(1, values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    double h = (values[i] - yr.lo) / (yr.hi - yr.lo) * (H - mt - mb);
    double x0 = ml + bw * static_cast<double>(i) + bw * 0.1;
    out << "<rect x='" << x0 << "' y='" << H - mb - h << "' width='"
        << bw * 0.8 << "' height='" << h << "' fill='#1f77b4'/>\n";
    out << "<text x='" << x0 + bw * 0.4 << "' y='" << H - mb + 16
        << "' text-anchor='middle' font-size='11'>"
        << (i < labels.size() ? labels[i] : std::to_string(i)) << "</text>\n";
    out << "<text x='" << x0 + bw * 0.4 << "' y='" << H - mb - h - 5
        << "' text-anchor='middle' font-size='10'>" << format_double(values[i])
        << "</text>\n";
  }
  out << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr
      << "' y2='" << H - mb << "' stroke='black'/>\n";
  out << "</svg>\n";
}

std::uint64_t dataset_hash(const Dataset& data) {
  // FNV-1a over labels then feature bytes.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&](const void* ptr, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(ptr);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  mix_bytes(data.labels.data(),
            static_cast<std::size_t>(data.labels.size()) * sizeof(int));
  mix_bytes(data.features.data(),
            static_cast<std::size_t>(data.features.size()) * sizeof(double));
  return h;
}

}  // namespace fedptr
