#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedptr/data.hpp"
#include "fedptr/federation.hpp"

namespace fedptr {

// Fixed metrics column order; documented in the README.
extern const std::vector<std::string> kMetricsColumns;

void write_metrics_csv(const std::string& path,
                       const std::vector<RoundMetrics>& metrics);

// Generic numeric CSV with a header row; NaN cells read back as NaN.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column_index(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
};
CsvTable read_csv_table(const std::string& path);

void write_partition_csv(const std::string& path,
                         const ClientPartition& partition);
void write_partition_stats(const std::string& path, const Dataset& data,
                           const ClientPartition& partition);

void write_aux_snapshot(const std::string& base_path,
                        const AuxiliaryDataset& aux, int round);

void svg_line_chart(const std::string& path,
                    const std::vector<double>& x,
                    const std::map<std::string, std::vector<double>>& series,
                    const std::string& x_label = "round");
void svg_bar_chart(const std::string& path,
                   const std::vector<std::string>& labels,
                   const std::vector<double>& values);

// Order-sensitive content hash of a dataset, for reproducibility records.
std::uint64_t dataset_hash(const Dataset& data);

std::string format_double(double v);

}  // namespace fedptr
