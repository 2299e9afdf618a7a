#pragma once

// File formats: numeric CSV tables, weight matrices (Matrix Market
// coordinate or `row,col,value` CSV triplets, both 1-based), posterior
// draws (`chain,draw,<params>`) and log-likelihood matrices
// (`chain,draw,obs_1..obs_N`).

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nfloo/covkit.hpp"
#include "nfloo/draws.hpp"
#include "nfloo/errors.hpp"
#include "nfloo/pointwise_loo.hpp"
#include "nfloo/sar_model.hpp"

namespace nfloo::io {

/// 17 significant digits: enough to round-trip any double.
inline std::string format_double(double x) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x,
                                 std::chars_format::general, 17);
  return std::string(buf.data(), ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"')
    out = out.substr(1, out.size() - 2);
  return out;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    // from_chars rejects "inf"/"nan" spellings some tools emit.
    std::istringstream is(s);
    if (!(is >> v) || !is.eof()) return std::nullopt;
  }
  return v;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw validation_error("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }

  Vector column_vector(std::size_t j) const {
    Vector v(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) v(static_cast<Eigen::Index>(r)) = rows[r][j];
    return v;
  }
};

/// Reads a CSV file with a header row and numeric cells.
inline CsvTable read_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw io_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                     std::to_string(t.header.size()) + " fields, found " +
                     std::to_string(cells.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      const auto v = parse_double(c);
      if (!v)
        throw io_error(path.string() + ":" + std::to_string(lineno) +
                       ": not a number: '" + c + "'");
      row.push_back(*v);
    }
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw io_error(path.string() + ": empty file");
  return t;
}

inline void write_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  for (std::size_t j = 0; j < header.size(); ++j)
    out << (j ? "," : "") << header[j];
  out << '\n';
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.size(); ++j)
      out << (j ? "," : "") << format_double(r[j]);
    out << '\n';
  }
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

namespace detail {

inline Eigen::Index to_index(double v, const std::string& where) {
  if (v != std::floor(v) || v < 1.0)
    throw io_error(where + ": indices must be positive integers");
  return static_cast<Eigen::Index>(v) - 1;
}

inline SparseMatrix read_matrix_market(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("%%MatrixMarket", 0) != 0)
    throw io_error(path.string() + ": missing %%MatrixMarket banner");
  std::string lower = line;
  std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
  if (lower.find("coordinate") == std::string::npos)
    throw io_error(path.string() + ": only coordinate format is supported");
  const bool pattern = lower.find("pattern") != std::string::npos;
  const bool symmetric = lower.find("symmetric") != std::string::npos;
  do {
    if (!std::getline(in, line)) throw io_error(path.string() + ": missing size line");
  } while (trim(line).empty() || line[0] == '%');
  long rows = 0, cols = 0, nnz = 0;
  {
    std::istringstream is(line);
    if (!(is >> rows >> cols >> nnz)) throw io_error(path.string() + ": bad size line");
  }
  std::vector<Triplet> trips;
  for (long k = 0; k < nnz; ++k) {
    if (!std::getline(in, line)) throw io_error(path.string() + ": truncated entries");
    if (trim(line).empty() || line[0] == '%') {
      --k;
      continue;
    }
    std::istringstream is(line);
    long r = 0, c = 0;
    double v = 1.0;
    if (!(is >> r >> c) || (!pattern && !(is >> v)))
      throw io_error(path.string() + ": bad entry '" + line + "'");
    if (r < 1 || c < 1) throw io_error(path.string() + ": indices must be 1-based");
    trips.push_back({r - 1, c - 1, v});
    if (symmetric && r != c) trips.push_back({c - 1, r - 1, v});
  }
  return SparseMatrix(rows, cols, trips);
}

inline SparseMatrix read_triplet_csv(const std::filesystem::path& path,
                                     std::optional<Eigen::Index> n) {
  auto in = open_in(path);
  std::string line;
  std::vector<Triplet> trips;
  Eigen::Index max_idx = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 3)
      throw io_error(path.string() + ":" + std::to_string(lineno) +
                     ": expected row,col,value");
    const auto r = parse_double(cells[0]);
    const auto c = parse_double(cells[1]);
    const auto v = parse_double(cells[2]);
    if (!r || !c || !v) {
      if (trips.empty() && lineno == 1) continue;  // header
      throw io_error(path.string() + ":" + std::to_string(lineno) + ": not numeric");
    }
    const std::string where = path.string() + ":" + std::to_string(lineno);
    trips.push_back({to_index(*r, where), to_index(*c, where), *v});
    max_idx = std::max({max_idx, trips.back().row + 1, trips.back().col + 1});
  }
  const Eigen::Index dim = n.value_or(max_idx);
  return SparseMatrix(dim, dim, trips);
}

}  // namespace detail

/// Reads weights from a .mtx Matrix Market file or a CSV triplet file.
/// For CSV the dimension defaults to the largest index seen.
inline SparseMatrix read_weights(const std::filesystem::path& path,
                                 std::optional<Eigen::Index> n = std::nullopt) {
  SparseMatrix w = path.extension() == ".mtx"
                       ? detail::read_matrix_market(path)
                       : detail::read_triplet_csv(path, n);
  if (n && (w.rows() != *n || w.cols() != *n))
    throw validation_error(path.string() + ": weights are " +
                           std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                           ", expected " + std::to_string(*n) + "x" + std::to_string(*n));
  return w;
}

/// Writes 1-based `row,col,value` triplets in row-major order.
inline void write_weights(const std::filesystem::path& path, const SparseMatrix& w) {
  auto trips = w.triplets();
  std::sort(trips.begin(), trips.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  auto out = open_out(path);
  out << "row,col,value\n";
  for (const auto& t : trips)
    out << t.row + 1 << ',' << t.col + 1 << ',' << format_double(t.value) << '\n';
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

struct DataSpec {
  std::string response;                 // empty: first column
  std::vector<std::string> predictors;  // empty: all other columns
  bool intercept = true;
  bool row_standardize = false;
};

inline SarData read_sar_data(const std::filesystem::path& data_path,
                             const std::filesystem::path& weights_path,
                             const DataSpec& spec = {}) {
  const CsvTable t = read_csv(data_path);
  if (t.rows.empty()) throw validation_error(data_path.string() + ": no rows");
  const std::string response = spec.response.empty() ? t.header.front() : spec.response;
  std::vector<std::string> preds = spec.predictors;
  if (preds.empty())
    for (const auto& h : t.header)
      if (h != response) preds.push_back(h);

  SarData d;
  d.response_name = response;
  d.y = t.column_vector(t.column(response));
  const auto n = d.y.size();
  const Eigen::Index p = static_cast<Eigen::Index>(preds.size()) + (spec.intercept ? 1 : 0);
  d.x.resize(n, p);
  Eigen::Index j = 0;
  if (spec.intercept) {
    d.x.col(j++).setOnes();
    d.predictor_names.push_back("Intercept");
  }
  for (const auto& name : preds) {
    d.x.col(j++) = t.column_vector(t.column(name));
    d.predictor_names.push_back(name);
  }
  d.w = read_weights(weights_path, n);
  if (spec.row_standardize) d.w = row_standardize(d.w);
  d.validate();
  return d;
}

inline void write_draws(const std::filesystem::path& path, const PosteriorDraws& d) {
  std::vector<std::string> header{"chain", "draw"};
  header.insert(header.end(), d.names.begin(), d.names.end());
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(d.s()));
  for (Eigen::Index s = 0; s < d.s(); ++s) {
    std::vector<double> r{double(d.chain_ids[s]), double(d.draw_ids[s])};
    for (Eigen::Index j = 0; j < d.p(); ++j) r.push_back(d.values(s, j));
    rows.push_back(std::move(r));
  }
  write_csv(path, header, rows);
}

inline PosteriorDraws read_draws(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 3 || t.header[0] != "chain" || t.header[1] != "draw")
    throw validation_error(path.string() +
                           ": draws CSV must start with columns chain,draw");
  PosteriorDraws d;
  d.names.assign(t.header.begin() + 2, t.header.end());
  d.values.resize(static_cast<Eigen::Index>(t.rows.size()),
                  static_cast<Eigen::Index>(d.names.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int chain = static_cast<int>(t.rows[r][0]);
    d.chain_ids.push_back(chain);
    d.draw_ids.push_back(static_cast<int>(t.rows[r][1]));
    d.chains = std::max(d.chains, chain);
    for (std::size_t j = 0; j < d.names.size(); ++j)
      d.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = t.rows[r][j + 2];
  }
  d.validate();
  return d;
}

inline void write_loglik(const std::filesystem::path& path, const LogLikMatrix& ll) {
  std::vector<std::string> header{"chain", "draw"};
  for (Eigen::Index i = 0; i < ll.n(); ++i) header.push_back("obs_" + std::to_string(i + 1));
  std::vector<std::vector<double>> rows;
  for (Eigen::Index s = 0; s < ll.s(); ++s) {
    std::vector<double> r{double(ll.chain_ids[static_cast<std::size_t>(s)]),
                          double(ll.draw_ids[static_cast<std::size_t>(s)])};
    for (Eigen::Index i = 0; i < ll.n(); ++i) r.push_back(ll.values(s, i));
    rows.push_back(std::move(r));
  }
  write_csv(path, header, rows);
}

inline LogLikMatrix read_loglik(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 3 || t.header[0] != "chain" || t.header[1] != "draw")
    throw validation_error(path.string() + ": log-lik CSV must start with chain,draw");
  LogLikMatrix ll;
  const auto n = static_cast<Eigen::Index>(t.header.size() - 2);
  ll.values.resize(static_cast<Eigen::Index>(t.rows.size()), n);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ll.chain_ids.push_back(static_cast<int>(t.rows[r][0]));
    ll.draw_ids.push_back(static_cast<int>(t.rows[r][1]));
    for (Eigen::Index i = 0; i < n; ++i)
      ll.values(static_cast<Eigen::Index>(r), i) = t.rows[r][static_cast<std::size_t>(i) + 2];
  }
  return ll;
}

}  // namespace nfloo::io
