#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace lcnet::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

Table read(const std::string& path, char delimiter = ',');

void write(const std::string& path, const Table& table, char delimiter = ',');

// Deterministic shortest-round-trip formatting used in every CSV we emit.
std::string format_number(double value);

// Matrix convenience wrappers: one header row, one data row per matrix row.
void write_matrix(const std::string& path,
                  const std::vector<std::string>& header,
                  const Eigen::MatrixXd& values);

Eigen::MatrixXd read_matrix(const std::string& path,
                            std::vector<std::string>* header = nullptr);

}  // namespace lcnet::csv
