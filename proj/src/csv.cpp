#include "lcnet/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lcnet::csv {

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

namespace {

std::vector<std::string> split(const std::string& line, char delimiter) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, delimiter)) fields.push_back(field);
  if (!line.empty() && line.back() == delimiter) fields.emplace_back();
  return fields;
}

}  // namespace

Table read(const std::string& path, char delimiter) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Table table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split(line, delimiter);
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size()) {
        throw std::runtime_error(path + ": ragged row with " +
                                 std::to_string(fields.size()) + " fields");
      }
      table.rows.push_back(std::move(fields));
    }
  }
  return table;
}

void write(const std::string& path, const Table& table, char delimiter) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i) out << delimiter;
    out << table.header[i];
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << delimiter;
      out << row[i];
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string format_number(double value) {
  char buf[40];
  // %.17g round-trips doubles exactly; trim to the shortest representation
  // that still round-trips for readable, stable files.
  for (int precision = 1; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

void write_matrix(const std::string& path,
                  const std::vector<std::string>& header,
                  const Eigen::MatrixXd& values) {
  if (static_cast<Eigen::Index>(header.size()) != values.cols()) {
    throw std::invalid_argument("write_matrix: header/column mismatch");
  }
  Table table;
  table.header = header;
  table.rows.reserve(static_cast<std::size_t>(values.rows()));
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    std::vector<std::string> row;
    row.reserve(static_cast<std::size_t>(values.cols()));
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      row.push_back(format_number(values(r, c)));
    }
    table.rows.push_back(std::move(row));
  }
  write(path, table);
}

Eigen::MatrixXd read_matrix(const std::string& path,
                            std::vector<std::string>* header) {
  const Table table = read(path);
  if (header != nullptr) *header = table.header;
  Eigen::MatrixXd values(static_cast<Eigen::Index>(table.rows.size()),
                         static_cast<Eigen::Index>(table.header.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      try {
        values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            std::stod(table.rows[r][c]);
      } catch (const std::exception&) {
        throw std::runtime_error(path + ": non-numeric field '" +
                                 table.rows[r][c] + "'");
      }
    }
  }
  return values;
}

}  // namespace lcnet::csv
