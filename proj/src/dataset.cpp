#include "catsel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

#include "catsel/errors.hpp"

namespace catsel {

Vector Dataset::w_row(std::size_t i) const {
  const auto r = static_cast<Eigen::Index>(i);
  Vector w(x.cols() + 1);
  w.head(x.cols()) = x.row(r).transpose();
  w[x.cols()] = z[r];
  return w;
}

Matrix Dataset::w() const {
  Matrix out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()) = z;
  return out;
}

void Dataset::validate() const {
  const auto n_rows = static_cast<Eigen::Index>(n());
  if (q < 2) throw Error(ErrorCode::InvalidInput, "q must be at least 2");
  if (y.size() != n() || x.rows() != n_rows || z.size() != n_rows) {
    throw Error(ErrorCode::InvalidInput, "dataset columns have inconsistent lengths");
  }
  if (weight.size() != 0 && weight.size() != n_rows) {
    throw Error(ErrorCode::InvalidInput, "weight vector has the wrong length");
  }
  if (x.cols() < 1) throw Error(ErrorCode::InvalidInput, "at least one x column is required");
  if (!x.allFinite() || !z.allFinite()) {
    throw Error(ErrorCode::InvalidInput, "dataset contains non-finite covariates");
  }
  for (std::size_t i = 0; i < n(); ++i) {
    if (s[i] > 1) throw Error(ErrorCode::InvalidInput, "row " + std::to_string(i + 1) + ": s must be 0 or 1");
    if (s[i] == 0 && y[i] != 0) {
      throw Error(ErrorCode::InvalidInput,
                  "row " + std::to_string(i + 1) + ": y recorded for an unselected row");
    }
    if (s[i] == 1 && (y[i] < 1 || y[i] > q)) {
      throw Error(ErrorCode::InvalidInput,
                  "row " + std::to_string(i + 1) + ": selected row needs y in 1..q");
    }
  }
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_line(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::InvalidInput, "line " + std::to_string(line) + ": " + what);
}

double parse_number(std::string_view field, std::size_t line, std::string_view column) {
  const std::string text(trim(field));
  if (text.empty()) bad_line(line, "empty value in column " + std::string(column));
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    bad_line(line, "cannot parse '" + text + "' in column " + std::string(column));
  }
  if (used != text.size() || !std::isfinite(v)) {
    bad_line(line, "cannot parse '" + text + "' in column " + std::string(column));
  }
  return v;
}

}  // namespace

Dataset read_dataset_csv(std::istream& in, const CsvReadOptions& opts) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::InvalidInput, "empty CSV input");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_commas(line);
  if (header.size() < 4 || trim(header[0]) != "s" || trim(header[1]) != "y" ||
      trim(header[2]) != "z") {
    bad_line(1, "header must start with s,y,z followed by x1..xd");
  }
  const std::size_t dx_file = header.size() - 3;
  for (std::size_t j = 0; j < dx_file; ++j) {
    if (trim(header[3 + j]) != "x" + std::to_string(j + 1)) {
      bad_line(1, "expected column x" + std::to_string(j + 1));
    }
  }
  const std::size_t offset = opts.add_intercept ? 1 : 0;
  const std::size_t dx = dx_file + offset;

  std::vector<std::uint8_t> s;
  std::vector<int> y;
  std::vector<double> z;
  std::vector<double> xs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != header.size()) {
      bad_line(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
    }
    const double sv = parse_number(fields[0], line_no, "s");
    if (sv != 0.0 && sv != 1.0) bad_line(line_no, "s must be 0 or 1");
    const auto yf = trim(fields[1]);
    int yv = 0;
    if (sv == 0.0) {
      if (!yf.empty()) bad_line(line_no, "y must be empty when s = 0");
    } else {
      if (yf.empty()) bad_line(line_no, "y is required when s = 1");
      const double yd = parse_number(yf, line_no, "y");
      if (yd != std::floor(yd) || yd < 1.0) bad_line(line_no, "y must be a positive integer");
      if (opts.q && yd > *opts.q) bad_line(line_no, "y exceeds q");
      yv = static_cast<int>(yd);
    }
    s.push_back(static_cast<std::uint8_t>(sv));
    y.push_back(yv);
    z.push_back(parse_number(fields[2], line_no, "z"));
    if (opts.add_intercept) xs.push_back(1.0);
    for (std::size_t j = 0; j < dx_file; ++j) {
      const double v = parse_number(fields[3 + j], line_no, "x" + std::to_string(j + 1));
      if (!opts.add_intercept && j == 0 && v != 1.0) {
        bad_line(line_no, "x1 must be the constant 1 (use --add-intercept otherwise)");
      }
      xs.push_back(v);
    }
  }
  if (s.empty()) throw Error(ErrorCode::InvalidInput, "CSV has no data rows");

  Dataset d;
  const auto n = static_cast<Eigen::Index>(s.size());
  d.x = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xs.data(), n, static_cast<Eigen::Index>(dx));
  d.z = Eigen::Map<const Vector>(z.data(), n);
  d.s = std::move(s);
  d.y = std::move(y);
  int max_y = 0;
  for (int v : d.y) max_y = std::max(max_y, v);
  d.q = opts.q.value_or(max_y);
  d.validate();
  return d;
}

Dataset read_dataset_csv(const std::string& path, const CsvReadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidInput, "cannot open " + path);
  return read_dataset_csv(in, opts);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "s,y,z";
  for (std::size_t j = 0; j < data.dx(); ++j) out << ",x" << (j + 1);
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << static_cast<int>(data.s[i]) << ',';
    if (data.s[i] == 1) out << data.y[i];
    std::snprintf(buf, sizeof buf, ",%.17g", data.z[r]);
    out << buf;
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", data.x(r, j));
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace catsel
