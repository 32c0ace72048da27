#include "pictraits/pipeline/table.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace pictraits::pipeline {

namespace {

bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos;
}

std::string quoted(const std::string& s) {
  if (!needs_quoting(s)) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

/// Reads one logical record, pulling in continuation lines while a quoted
/// field holds an embedded newline. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields, const std::string& path,
                 std::size_t& line_no) {
  std::string line;
  if (!std::getline(in, line)) return false;
  ++line_no;
  fields.clear();
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size()) {
      if (!in_quotes) break;
      std::string more;
      if (!std::getline(in, more)) {
        throw ValidationError(path + ":" + std::to_string(line_no) + ": unterminated quote");
      }
      ++line_no;
      cur += '\n';
      line = std::move(more);
      i = static_cast<std::size_t>(-1);
      continue;
    }
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return true;
}

}  // namespace

Eigen::Index Table::column(const std::string& name) const {
  for (std::size_t j = 0; j < value_names.size(); ++j) {
    if (value_names[j] == name) return static_cast<Eigen::Index>(j);
  }
  throw ValidationError("table: no column named " + name);
}

std::string format_cell(Scalar v) {
  if (is_missing(v)) return {};
  char buf[40];
  // %.17g always round-trips but is noisy; try shorter forms first.
  for (int prec = 12; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void write_csv(const std::string& path, const Table& t) {
  if (t.keys.size() != static_cast<std::size_t>(t.values.rows()) ||
      t.value_names.size() != static_cast<std::size_t>(t.values.cols())) {
    throw ValidationError("write_csv: inconsistent table shape for " + path);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("write_csv: cannot open " + path);
  std::string line;
  for (std::size_t k = 0; k < t.key_names.size(); ++k) {
    if (k) line += ',';
    line += quoted(t.key_names[k]);
  }
  for (const auto& name : t.value_names) {
    line += ',';
    line += quoted(name);
  }
  out << line << '\n';
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
    line.clear();
    const auto& row_keys = t.keys[static_cast<std::size_t>(i)];
    if (row_keys.size() != t.key_names.size()) {
      throw ValidationError("write_csv: key arity mismatch at row " + std::to_string(i));
    }
    for (std::size_t k = 0; k < row_keys.size(); ++k) {
      if (k) line += ',';
      line += quoted(row_keys[k]);
    }
    for (Eigen::Index j = 0; j < t.values.cols(); ++j) {
      line += ',';
      line += format_cell(t.values(i, j));
    }
    out << line << '\n';
  }
  if (!out) throw ValidationError("write_csv: write failed for " + path);
}

Table read_csv(const std::string& path, std::size_t n_key_columns) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("read_csv: cannot open " + path);
  std::size_t line_no = 0;
  std::vector<std::string> header;
  if (!read_record(in, header, path, line_no)) {
    throw ValidationError("read_csv: empty file " + path);
  }
  if (header.size() < n_key_columns) {
    throw ValidationError("read_csv: header narrower than key count in " + path);
  }
  Table t;
  t.key_names.assign(header.begin(), header.begin() + static_cast<long>(n_key_columns));
  t.value_names.assign(header.begin() + static_cast<long>(n_key_columns), header.end());

  std::vector<std::vector<Scalar>> rows;
  std::vector<std::string> fields;
  while (read_record(in, fields, path, line_no)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    if (fields.size() != header.size()) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
    }
    t.keys.emplace_back(fields.begin(), fields.begin() + static_cast<long>(n_key_columns));
    std::vector<Scalar> row(t.value_names.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      const std::string& cell = fields[n_key_columns + j];
      if (cell.empty()) {
        row[j] = kMissing;
        continue;
      }
      char* end = nullptr;
      row[j] = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') {
        throw ValidationError(path + ":" + std::to_string(line_no) + ": bad number '" + cell +
                              "'");
      }
    }
    rows.push_back(std::move(row));
  }

  t.values.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(t.value_names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return t;
}

}  // namespace pictraits::pipeline
