#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "catsel/numerics.hpp"

namespace catsel {

/// Microdata rows (S, Y if selected, X, Z). The selection covariates are
/// W = (X, Z). Categories are numbered 1..q and c_q is the baseline.
struct Dataset {
  int q = 2;
  Matrix x;                        ///< n x d_x, first column normally the intercept
  Vector z;                        ///< instrument
  std::vector<std::uint8_t> s;     ///< selection indicator
  std::vector<int> y;              ///< category in 1..q when s = 1, 0 otherwise
  /// Optional non-negative row weights for population-weighted evaluations.
  /// Empty means unit weights.
  Vector weight;

  std::size_t n() const noexcept { return s.size(); }
  std::size_t dx() const noexcept { return static_cast<std::size_t>(x.cols()); }
  std::size_t dw() const noexcept { return dx() + 1; }
  double row_weight(std::size_t i) const noexcept {
    return weight.size() == 0 ? 1.0 : weight[static_cast<Eigen::Index>(i)];
  }
  /// Row i of W = (x_i, z_i).
  Vector w_row(std::size_t i) const;
  Matrix w() const;

  /// Throws InvalidInput on shape mismatch, NaN, y recorded for an
  /// unselected row, missing or out-of-range y for a selected row.
  void validate() const;
};

struct CsvReadOptions {
  /// Number of categories; inferred as max(y) when absent.
  std::optional<int> q;
  /// Prepend a constant column instead of requiring x1 == 1.
  bool add_intercept = false;
};

/// Reads the `s,y,z,x1..xd` microdata schema. Throws InvalidInput naming
/// the offending line on any schema violation.
Dataset read_dataset_csv(std::istream& in, const CsvReadOptions& opts = {});
Dataset read_dataset_csv(const std::string& path, const CsvReadOptions& opts = {});

/// Writes the schema read by read_dataset_csv, numbers with 17 significant digits.
void write_dataset_csv(std::ostream& out, const Dataset& data);

}  // namespace catsel
