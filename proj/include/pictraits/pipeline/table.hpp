#pragma once

#include "pictraits/types.hpp"

#include <string>
#include <vector>

namespace pictraits::pipeline {

/// Rectangular CSV payload: one or more leading string key columns followed
/// by numeric columns. Missing numeric cells are kMissing and serialize as
/// empty cells.
struct Table {
  std::vector<std::string> key_names;
  std::vector<std::vector<std::string>> keys;  // [row][key column]
  std::vector<std::string> value_names;
  MatrixX values;                              // rows x value columns

  Eigen::Index rows() const { return values.rows(); }

  /// Index of a value column; throws ValidationError when absent.
  Eigen::Index column(const std::string& name) const;
};

/// Numeric cell formatting used across all emitted files: empty for missing,
/// shortest round-trip-stable decimal otherwise.
std::string format_cell(Scalar v);

/// Header row plus data rows; keys first. Fields containing separators are
/// quoted; writes are atomic enough for sequential pipelines (truncate+write).
void write_csv(const std::string& path, const Table& t);

/// Reads a CSV produced by write_csv. The first n_key_columns are kept as
/// strings; every other cell parses as a number, empty meaning missing.
Table read_csv(const std::string& path, std::size_t n_key_columns = 1);

}  // namespace pictraits::pipeline
