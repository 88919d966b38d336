#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stosca/nn.hpp"
#include "stosca/types.hpp"

namespace stosca {

enum class Task { Regression, Binary };

inline std::string_view to_string(Task t) { return t == Task::Regression ? "regression" : "binary"; }

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CsvSchema {
  char delimiter = ',';
  bool header = true;
  /// Target column by header name; when empty, target_index is used (negative counts from the end).
  std::string target_name;
  Index target_index = -1;
  /// Columns dropped at load time (identifiers and the like), by header name or "#<index>".
  std::vector<std::string> drop_columns;
};

/// Parsed numeric table; std::nullopt marks a missing cell.
struct RawTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> rows;
  Index target = -1;  // resolved target column

  Index num_rows() const { return static_cast<Index>(rows.size()); }
  Index num_cols() const { return static_cast<Index>(columns.size()); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_cell(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty() || s == "?" || s == "NA") return std::nullopt;
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  double v = 0.0;
  in >> v;
  if (in.fail() || !in.eof() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a delimited numeric file. Empty, "?", "NA" and non-numeric cells become missing.
inline RawTable load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot read '" + path + "'");
  RawTable table;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  std::vector<std::vector<std::optional<double>>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty() || detail::trim(line) == "\r") continue;
    auto fields = detail::split_csv_line(line, schema.delimiter);
    if (width == 0) {
      width = fields.size();
      if (schema.header) {
        for (auto& f : fields) table.columns.push_back(detail::trim(f));
        continue;
      }
      for (std::size_t c = 0; c < width; ++c) table.columns.push_back("#" + std::to_string(c));
    }
    if (fields.size() != width) {
      throw CsvError("ragged row at line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                     " fields, got " + std::to_string(fields.size()));
    }
    std::vector<std::optional<double>> row;
    row.reserve(width);
    for (const auto& f : fields) row.push_back(detail::parse_cell(f));
    rows.push_back(std::move(row));
  }
  if (width == 0) throw CsvError("'" + path + "' is empty");

  // Column selection.
  std::vector<char> keep(width, 1);
  for (const auto& name : schema.drop_columns) {
    bool found = false;
    for (std::size_t c = 0; c < width; ++c) {
      if (table.columns[c] == name || "#" + std::to_string(c) == name) {
        keep[c] = 0;
        found = true;
      }
    }
    if (!found) throw CsvError("drop column '" + name + "' not found");
  }
  RawTable out;
  std::vector<std::size_t> kept;
  for (std::size_t c = 0; c < width; ++c) {
    if (keep[c]) {
      kept.push_back(c);
      out.columns.push_back(table.columns[c]);
    }
  }
  for (auto& r : rows) {
    std::vector<std::optional<double>> nr;
    nr.reserve(kept.size());
    for (std::size_t c : kept) nr.push_back(r[c]);
    out.rows.push_back(std::move(nr));
  }
  for (std::size_t c = 0; c < kept.size(); ++c) {
    const bool any = std::any_of(out.rows.begin(), out.rows.end(), [&](const auto& r) { return r[c].has_value(); });
    if (!any) throw CsvError("column '" + out.columns[c] + "' has no numeric values");
  }
  const Index ncols = out.num_cols();
  if (!schema.target_name.empty()) {
    auto it = std::find(out.columns.begin(), out.columns.end(), schema.target_name);
    if (it == out.columns.end()) throw CsvError("target column '" + schema.target_name + "' not found");
    out.target = static_cast<Index>(it - out.columns.begin());
  } else {
    out.target = schema.target_index < 0 ? ncols + schema.target_index : schema.target_index;
    if (out.target < 0 || out.target >= ncols) throw CsvError("target column index out of range");
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty set");
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Replaces missing cells by the median of the present values in their column.
inline RawTable impute_median(RawTable table) {
  for (Index c = 0; c < table.num_cols(); ++c) {
    std::vector<double> present;
    for (const auto& r : table.rows) {
      if (r[static_cast<std::size_t>(c)]) present.push_back(*r[static_cast<std::size_t>(c)]);
    }
    if (present.empty()) throw std::invalid_argument("column '" + table.columns[static_cast<std::size_t>(c)] + "' is entirely missing");
    if (present.size() == table.rows.size()) continue;
    const double m = median(std::move(present));
    for (auto& r : table.rows) {
      if (!r[static_cast<std::size_t>(c)]) r[static_cast<std::size_t>(c)] = m;
    }
  }
  return table;
}

enum class NormalizeKind { Input, Output };

/// Affine map of one column from [src_min, src_max] onto [lo, hi].
struct AffineMap {
  double src_min = 0.0, src_max = 1.0, lo = -0.5, hi = 0.5;

  bool constant() const { return src_max == src_min; }
  double apply(double v) const {
    if (constant()) return 0.5 * (lo + hi);
    return lo + (v - src_min) * (hi - lo) / (src_max - src_min);
  }
  double inverse(double v) const {
    if (constant()) return src_min;
    return src_min + (v - lo) * (src_max - src_min) / (hi - lo);
  }
};

struct NormalizationParams {
  std::vector<AffineMap> columns;
};

inline std::pair<double, double> target_range(NormalizeKind kind) {
  return kind == NormalizeKind::Input ? std::pair{-0.5, 0.5} : std::pair{-0.9, 0.9};
}

/// Column-wise affine rescaling: inputs onto [-0.5, 0.5], outputs onto [-0.9, 0.9].
inline std::pair<Matrix, NormalizationParams> normalize(const Matrix& data, NormalizeKind kind) {
  const auto [lo, hi] = target_range(kind);
  NormalizationParams params;
  Matrix out(data.rows(), data.cols());
  for (Index c = 0; c < data.cols(); ++c) {
    AffineMap m{data.col(c).minCoeff(), data.col(c).maxCoeff(), lo, hi};
    if (!std::isfinite(m.src_min) || !std::isfinite(m.src_max)) throw std::invalid_argument("non-finite column");
    for (Index r = 0; r < data.rows(); ++r) out(r, c) = m.apply(data(r, c));
    params.columns.push_back(m);
  }
  return {std::move(out), std::move(params)};
}

inline Matrix denormalize(const Matrix& data, const NormalizationParams& params) {
  detail::require_dim(data.cols(), static_cast<Index>(params.columns.size()), "normalized column count");
  Matrix out(data.rows(), data.cols());
  for (Index c = 0; c < data.cols(); ++c) {
    for (Index r = 0; r < data.rows(); ++r) out(r, c) = params.columns[static_cast<std::size_t>(c)].inverse(data(r, c));
  }
  return out;
}

/// "key=value" lines, one block per column.
inline std::string serialize(const NormalizationParams& p, const std::string& prefix) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t c = 0; c < p.columns.size(); ++c) {
    const auto& m = p.columns[c];
    out << prefix << '.' << c << ".min=" << m.src_min << '\n'
        << prefix << '.' << c << ".max=" << m.src_max << '\n'
        << prefix << '.' << c << ".lo=" << m.lo << '\n'
        << prefix << '.' << c << ".hi=" << m.hi << '\n';
  }
  return out.str();
}

struct Dataset {
  std::string name;
  Matrix inputs;
  Vector targets;
  Task task = Task::Regression;
  NormalizationParams input_norm;
  NormalizationParams target_norm;
  std::map<std::string, std::string> provenance;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }

  Dataset subset(const std::vector<Index>& idx) const {
    Dataset d;
    d.name = name;
    d.task = task;
    d.input_norm = input_norm;
    d.target_norm = target_norm;
    d.provenance = provenance;
    d.inputs.resize(static_cast<Index>(idx.size()), inputs.cols());
    d.targets.resize(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      d.inputs.row(static_cast<Index>(i)) = inputs.row(idx[i]);
      d.targets(static_cast<Index>(i)) = targets(idx[i]);
    }
    return d;
  }
};

/// Applies the preprocessing protocol: impute, then normalize on the whole table.
inline Dataset prepare_dataset(const RawTable& raw, Task task, std::string name) {
  RawTable t = impute_median(raw);
  const Index n = t.num_rows();
  const Index d = t.num_cols() - 1;
  if (n == 0) throw std::invalid_argument("dataset has no rows");
  Matrix x(n, d);
  Matrix y(n, 1);
  for (Index r = 0; r < n; ++r) {
    Index col = 0;
    for (Index c = 0; c < t.num_cols(); ++c) {
      const double v = *t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      if (c == t.target) {
        y(r, 0) = v;
      } else {
        x(r, col++) = v;
      }
    }
  }
  Dataset ds;
  ds.name = std::move(name);
  ds.task = task;
  std::tie(ds.inputs, ds.input_norm) = normalize(x, NormalizeKind::Input);
  if (task == Task::Regression) {
    Matrix ny;
    std::tie(ny, ds.target_norm) = normalize(y, NormalizeKind::Output);
    ds.targets = ny.col(0);
  } else {
    for (Index r = 0; r < n; ++r) {
      if (y(r, 0) != 0.0 && y(r, 0) != 1.0) throw std::invalid_argument("binary targets must be 0 or 1");
    }
    ds.targets = y.col(0);
  }
  ds.provenance["rows"] = std::to_string(n);
  ds.provenance["inputs"] = std::to_string(d);
  return ds;
}

struct SplitSpec {
  double test_fraction = 0.25;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<Index> train;
  std::vector<Index> test;
};

/// Random disjoint split with round(N * fraction) test rows; both halves sorted.
inline SplitIndices split_indices(Index n, const SplitSpec& spec) {
  if (n < 4) throw std::invalid_argument("need at least 4 samples to split");
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) throw std::invalid_argument("test fraction must be in (0,1)");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(spec.seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.test_fraction));
  SplitIndices s;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

inline std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
  const SplitIndices s = split_indices(data.size(), spec);
  return {data.subset(s.train), data.subset(s.test)};
}

/// Uniform mini-batch draws without replacement, fresh every call.
class BatchSampler {
 public:
  explicit BatchSampler(std::uint64_t seed) : rng_(seed) {}

  std::vector<Index> draw(Index n, Index batch_size) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
    if (batch_size > n) throw std::invalid_argument("batch size exceeds the training set");
    if (static_cast<Index>(pool_.size()) != n) {
      pool_.resize(static_cast<std::size_t>(n));
      std::iota(pool_.begin(), pool_.end(), Index{0});
    }
    // Partial Fisher-Yates: the first batch_size slots become a uniform sample.
    for (Index i = 0; i < batch_size; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(pool_[static_cast<std::size_t>(i)], pool_[static_cast<std::size_t>(pick(rng_))]);
    }
    return {pool_.begin(), pool_.begin() + batch_size};
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Index> pool_;
};

inline MiniBatch sample_minibatch(const Dataset& train, Index batch_size, BatchSampler& sampler) {
  return make_batch(train.inputs, train.targets, sampler.draw(train.size(), batch_size));
}

/// Fixed evaluation subsample (all rows when n <= max_rows).
inline std::vector<Index> evaluation_indices(Index n, Index max_rows, std::uint64_t seed) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (max_rows > 0 && n > max_rows) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(max_rows));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

/// y = sin(a'x) + 0.5 (b'x)^2 + noise, x uniform on [-1,1]^d, then normalized.
inline Dataset synth_regression(Index n, Index d, double noise, std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("synthetic dataset needs N > 0");
  if (d <= 0) throw std::invalid_argument("synthetic dataset needs d > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const double scale = 2.0 / std::sqrt(static_cast<double>(d));
  Vector a(d), b(d);
  for (Index j = 0; j < d; ++j) a(j) = scale * gauss(rng);
  for (Index j = 0; j < d; ++j) b(j) = scale * gauss(rng);
  Matrix x(n, d);
  Matrix y(n, 1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = unif(rng);
    const double u = x.row(i).dot(a);
    const double v = x.row(i).dot(b);
    y(i, 0) = std::sin(u) + 0.5 * v * v + (noise > 0.0 ? noise * gauss(rng) : 0.0);
  }
  Dataset ds;
  ds.name = "synthetic_regression";
  ds.task = Task::Regression;
  std::tie(ds.inputs, ds.input_norm) = normalize(x, NormalizeKind::Input);
  Matrix ny;
  std::tie(ny, ds.target_norm) = normalize(y, NormalizeKind::Output);
  ds.targets = ny.col(0);
  ds.provenance = {{"generator", "synth_regression"}, {"seed", std::to_string(seed)},
                   {"noise", std::to_string(noise)}};
  return ds;
}

/// Binary labels drawn from a smooth non-linear logit of Gaussian features; inputs normalized.
inline Dataset synth_binary(Index n, Index d, std::uint64_t seed) {
  if (n <= 0 || d <= 0) throw std::invalid_argument("synthetic dataset needs N > 0 and d > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Vector a(d), b(d), c(d);
  for (Index j = 0; j < d; ++j) a(j) = 1.5 * scale * gauss(rng);
  for (Index j = 0; j < d; ++j) b(j) = scale * gauss(rng);
  for (Index j = 0; j < d; ++j) c(j) = scale * gauss(rng);
  Matrix x(n, d);
  Vector logit(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = gauss(rng);
    const double u = x.row(i).dot(a);
    const double v = x.row(i).dot(b);
    logit(i) = 2.0 * std::sin(u) + v * v + x.row(i).dot(c);
  }
  std::vector<double> sorted(logit.data(), logit.data() + n);
  const double center = median(sorted);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix y(n, 1);
  for (Index i = 0; i < n; ++i) y(i, 0) = unif(rng) < sigmoid(2.0 * (logit(i) - center)) ? 1.0 : 0.0;
  Dataset ds;
  ds.name = "synthetic_binary";
  ds.task = Task::Binary;
  std::tie(ds.inputs, ds.input_norm) = normalize(x, NormalizeKind::Input);
  ds.targets = y.col(0);
  ds.provenance = {{"generator", "synth_binary"}, {"seed", std::to_string(seed)}};
  return ds;
}

}  // namespace stosca
