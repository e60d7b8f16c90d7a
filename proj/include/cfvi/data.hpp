#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cfvi/error.hpp"
#include "cfvi/rng.hpp"

namespace cfvi {

/// Dense n x p matrix stored column by column; forests scan one feature at a
/// time, so columns are contiguous.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

  static FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    FeatureMatrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < m.rows_; ++i) {
      if (rows[i].size() != m.cols_) {
        throw Error(ErrorKind::DimensionMismatch, "ragged rows in feature matrix");
      }
      for (std::size_t j = 0; j < m.cols_; ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return values_[j * rows_ + i]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[j * rows_ + i]; }

  std::span<const double> column(std::size_t j) const {
    return {values_.data() + j * rows_, rows_};
  }
  std::span<double> column(std::size_t j) { return {values_.data() + j * rows_, rows_}; }

  std::vector<double> row(std::size_t i) const {
    std::vector<double> out(cols_);
    for (std::size_t j = 0; j < cols_; ++j) out[j] = (*this)(i, j);
    return out;
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

/// Sorted set of column indices.
class FeatureSet {
 public:
  FeatureSet() = default;
  FeatureSet(std::initializer_list<std::size_t> indices) : FeatureSet(std::vector<std::size_t>(indices)) {}
  explicit FeatureSet(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
    std::sort(indices_.begin(), indices_.end());
    indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
  }

  static FeatureSet all(std::size_t p) {
    std::vector<std::size_t> idx(p);
    for (std::size_t j = 0; j < p; ++j) idx[j] = j;
    return FeatureSet(std::move(idx));
  }

  std::size_t size() const noexcept { return indices_.size(); }
  bool empty() const noexcept { return indices_.empty(); }
  bool contains(std::size_t j) const {
    return std::binary_search(indices_.begin(), indices_.end(), j);
  }
  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }
  std::size_t operator[](std::size_t k) const { return indices_[k]; }
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }

  FeatureSet without(const FeatureSet& drop) const {
    std::vector<std::size_t> kept;
    std::set_difference(indices_.begin(), indices_.end(), drop.indices_.begin(),
                        drop.indices_.end(), std::back_inserter(kept));
    return FeatureSet(std::move(kept));
  }

  /// Throws unless non-empty and every index is below p.
  void check(std::size_t p) const {
    if (indices_.empty()) throw Error(ErrorKind::EmptyFeatureSet, "feature set is empty");
    if (indices_.back() >= p) {
      throw Error(ErrorKind::InvalidArgument,
                  "feature index " + std::to_string(indices_.back()) + " out of range");
    }
  }

  /// Order-independent content hash, used to derive per-drop-set seeds.
  std::uint64_t hash() const {
    std::uint64_t h = mix64(0x5bd1e995ULL + indices_.size());
    for (std::size_t j : indices_) h = mix64(h ^ (j + 1));
    return h;
  }

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;

 private:
  std::vector<std::size_t> indices_;
};

/// Observed causal sample (X, Y, W). Immutable once created.
class Dataset {
 public:
  static Dataset create(FeatureMatrix features, std::vector<double> outcome,
                        std::vector<std::uint8_t> treatment,
                        std::vector<std::string> feature_names = {}) {
    Dataset d;
    d.features_ = std::move(features);
    d.outcome_ = std::move(outcome);
    d.treatment_ = std::move(treatment);
    d.names_ = std::move(feature_names);
    if (d.names_.empty()) {
      for (std::size_t j = 0; j < d.features_.cols(); ++j) d.names_.push_back("x" + std::to_string(j + 1));
    }
    d.check_invariants();
    return d;
  }

  std::size_t n() const noexcept { return outcome_.size(); }
  std::size_t p() const noexcept { return features_.cols(); }
  const FeatureMatrix& features() const noexcept { return features_; }
  const std::vector<double>& outcome() const noexcept { return outcome_; }
  const std::vector<std::uint8_t>& treatment() const noexcept { return treatment_; }
  const std::vector<std::string>& feature_names() const noexcept { return names_; }

  std::optional<std::size_t> column_index(std::string_view name) const {
    for (std::size_t j = 0; j < names_.size(); ++j) {
      if (names_[j] == name) return j;
    }
    return std::nullopt;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Dataset() = default;

  void check_invariants() const {
    const std::size_t n = outcome_.size();
    if (n == 0 || features_.cols() == 0) {
      throw Error(ErrorKind::TooFewRows, "dataset needs n >= 1 and p >= 1");
    }
    if (features_.rows() != n || treatment_.size() != n) {
      throw Error(ErrorKind::DimensionMismatch, "X, Y and W disagree on n");
    }
    if (names_.size() != features_.cols()) {
      throw Error(ErrorKind::DimensionMismatch, "one feature name per column required");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (treatment_[i] > 1) {
        throw Error(ErrorKind::NonBinaryTreatment, "treatment must be 0 or 1", i + 1);
      }
      if (!std::isfinite(outcome_[i])) {
        throw Error(ErrorKind::NonFiniteValue, "non-finite outcome", i + 1);
      }
      for (std::size_t j = 0; j < features_.cols(); ++j) {
        if (!std::isfinite(features_(i, j))) {
          throw Error(ErrorKind::NonFiniteValue, "non-finite value in column " + names_[j], i + 1);
        }
      }
    }
  }

  FeatureMatrix features_;
  std::vector<double> outcome_;
  std::vector<std::uint8_t> treatment_;
  std::vector<std::string> names_;
};

/// Locally centered sample: Y~ = Y - m_hat, W~ = W - pi_hat.
struct CenteredDataset {
  FeatureMatrix features;
  std::vector<double> centered_outcome;
  std::vector<double> centered_treatment;
  std::vector<double> m_hat;
  std::vector<double> pi_hat;
  std::vector<std::string> feature_names;

  std::size_t n() const noexcept { return centered_outcome.size(); }
  std::size_t p() const noexcept { return features.cols(); }
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      return cells;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Parses a real cell; nullopt when the cell is not a number at all.
inline std::optional<double> parse_real(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ptr != cell.data() + cell.size()) return std::nullopt;
  if (ec == std::errc::result_out_of_range) return std::numeric_limits<double>::infinity();
  if (ec != std::errc()) return std::nullopt;
  return value;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads a comma-separated file with a header row. The outcome and treatment
/// columns are taken by name, every other column becomes a feature in header
/// order.
inline Dataset load_csv(const std::string& path, std::string_view outcome_col,
                        std::string_view treatment_col) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileError, "cannot open " + path);

  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!detail::trim(line).empty()) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw Error(ErrorKind::EmptyFile, path + " has no header row");

  const auto header_views = detail::split_commas(line);
  std::vector<std::string> header(header_views.begin(), header_views.end());
  std::optional<std::size_t> y_pos, w_pos;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == outcome_col) y_pos = k;
    if (header[k] == treatment_col) w_pos = k;
  }
  if (!y_pos) throw Error(ErrorKind::MissingColumn, "no column named " + std::string(outcome_col));
  if (!w_pos) throw Error(ErrorKind::MissingColumn, "no column named " + std::string(treatment_col));
  if (*y_pos == *w_pos) throw Error(ErrorKind::InvalidArgument, "outcome and treatment are the same column");

  std::vector<std::size_t> feature_pos;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (k != *y_pos && k != *w_pos) {
      feature_pos.push_back(k);
      names.push_back(header[k]);
    }
  }
  if (feature_pos.empty()) throw Error(ErrorKind::MissingColumn, "no feature columns");

  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  std::vector<std::uint8_t> w;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    ++row;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::MissingValue,
                  "expected " + std::to_string(header.size()) + " cells, got " +
                      std::to_string(cells.size()),
                  row);
    }
    auto real_cell = [&](std::size_t k) {
      if (cells[k].empty()) throw Error(ErrorKind::MissingValue, "empty cell in column " + header[k], row);
      const auto v = detail::parse_real(cells[k]);
      if (!v || !std::isfinite(*v)) {
        throw Error(ErrorKind::NonFiniteValue, "column " + header[k] + " holds '" + std::string(cells[k]) + "'", row);
      }
      return *v;
    };
    std::vector<double> x(feature_pos.size());
    for (std::size_t j = 0; j < feature_pos.size(); ++j) x[j] = real_cell(feature_pos[j]);
    rows.push_back(std::move(x));
    y.push_back(real_cell(*y_pos));

    const std::string t = detail::lower(cells[*w_pos]);
    if (t.empty()) throw Error(ErrorKind::MissingValue, "empty treatment cell", row);
    if (t == "1" || t == "true") {
      w.push_back(1);
    } else if (t == "0" || t == "false") {
      w.push_back(0);
    } else {
      throw Error(ErrorKind::NonBinaryTreatment, "treatment cell '" + std::string(cells[*w_pos]) + "'", row);
    }
  }
  if (rows.empty()) throw Error(ErrorKind::EmptyFile, path + " has no data rows");
  return Dataset::create(FeatureMatrix::from_rows(rows), std::move(y), std::move(w), std::move(names));
}

/// Writes features in column order, then the outcome and treatment columns.
/// Reals are printed with 17 significant digits, so a reload is bit-exact.
inline void write_csv(const Dataset& d, std::ostream& out, std::string_view outcome_col = "y",
                      std::string_view treatment_col = "w") {
  for (const auto& name : d.feature_names()) out << name << ',';
  out << outcome_col << ',' << treatment_col << '\n';
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < d.p(); ++j) out << detail::format_real(d.features()(i, j)) << ',';
    out << detail::format_real(d.outcome()[i]) << ',' << int(d.treatment()[i]) << '\n';
  }
}

inline void write_csv(const Dataset& d, const std::string& path, std::string_view outcome_col = "y",
                      std::string_view treatment_col = "w") {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::FileError, "cannot write " + path);
  write_csv(d, out, outcome_col, treatment_col);
}

// ---------------------------------------------------------------------------
// Validation

enum class Warning { DegenerateTreatmentArm, ConstantOutcome };

constexpr std::string_view to_string(Warning w) {
  switch (w) {
    case Warning::DegenerateTreatmentArm: return "DegenerateTreatmentArm";
    case Warning::ConstantOutcome: return "ConstantOutcome";
  }
  return "Unknown";
}

struct ValidationReport {
  std::optional<Error> error;
  std::vector<Warning> warnings;

  bool ok() const noexcept { return !error.has_value(); }
  bool has_warning(Warning w) const {
    return std::find(warnings.begin(), warnings.end(), w) != warnings.end();
  }
};

/// Re-checks the dataset invariants and the requirements of estimation.
/// Returns the first violation instead of throwing.
inline ValidationReport validate(const Dataset& d) {
  ValidationReport report;
  try {
    Dataset::create(d.features(), d.outcome(), d.treatment(), d.feature_names());
  } catch (const Error& e) {
    report.error = e;
    return report;
  }
  if (d.n() < 2) {
    report.error = Error(ErrorKind::TooFewRows, "at least two rows are required");
    return report;
  }
  const auto treated = static_cast<std::size_t>(std::count(d.treatment().begin(), d.treatment().end(), 1));
  if (treated == 0 || treated == d.n()) report.warnings.push_back(Warning::DegenerateTreatmentArm);
  const auto [lo, hi] = std::minmax_element(d.outcome().begin(), d.outcome().end());
  if (*lo == *hi) report.warnings.push_back(Warning::ConstantOutcome);
  return report;
}

}  // namespace cfvi
