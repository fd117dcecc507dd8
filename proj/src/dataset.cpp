#include "causalfuse/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace causalfuse {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_double(const std::string& cell, const std::string& col, int row) {
  double v = 0.0;
  const char* b = cell.data();
  const char* e = b + cell.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e)
    throw DataError("row " + std::to_string(row) + ": cannot parse '" + cell +
                    "' in column " + col);
  return v;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

int find_col(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return -1;
  return static_cast<int>(it - header.begin());
}

// columns named <prefix><digits>, ordered by numeric suffix
std::vector<std::string> infer_numbered(const std::vector<std::string>& header,
                                        const std::string& prefix) {
  std::vector<std::pair<int, std::string>> found;
  for (const auto& h : header) {
    if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string tail = h.substr(prefix.size());
    if (!std::all_of(tail.begin(), tail.end(), [](char c) { return c >= '0' && c <= '9'; }))
      continue;
    found.emplace_back(std::stoi(tail), h);
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> names;
  for (auto& [k, n] : found) names.push_back(n);
  return names;
}

}  // namespace

void FusedDataset::validate() const {
  const int n = n1();
  if (n == 0) throw DataError("dataset is empty");
  const std::size_t un = static_cast<std::size_t>(n);
  if (ids.size() != un || in_validation.size() != un ||
      y.size() != n || x.rows() != n || u.rows() != n)
    throw DataError("dataset columns have inconsistent lengths");
  int n_val = 0, val_treated = 0, val_control = 0;
  for (int i = 0; i < n; ++i) {
    if (a[i] != 0.0 && a[i] != 1.0)
      throw DataError("treatment must be 0 or 1 (row " + std::to_string(i + 1) + ")");
    if (!std::isfinite(y[i]))
      throw DataError("outcome missing or non-finite (row " + std::to_string(i + 1) + ")");
    for (int k = 0; k < p(); ++k)
      if (!std::isfinite(x(i, k)))
        throw DataError("X missing or non-finite (row " + std::to_string(i + 1) + ")");
    if (in_validation[i]) {
      ++n_val;
      (a[i] == 1.0 ? val_treated : val_control)++;
      for (int k = 0; k < q(); ++k)
        if (!std::isfinite(u(i, k)))
          throw DataError("incomplete confounder on validation unit (row " +
                          std::to_string(i + 1) + ")");
    }
  }
  if (n_val == 0) throw DataError("no validation rows flagged");
  if (val_treated == 0 || val_control == 0)
    throw DataError("validation subset must contain both treatment arms");
  if (design == SamplingDesign::KnownInclusion) {
    if (pi.size() != n) throw DataError("known-inclusion design requires pi on every row");
    for (int i = 0; i < n; ++i)
      if (!(pi[i] > 0.0 && pi[i] <= 1.0))
        throw DataError("inclusion probability must be positive and at most 1 (row " +
                        std::to_string(i + 1) + ")");
  } else if (pi.size() != 0) {
    throw DataError("simple-random design must not carry pi");
  }
}

FusedDataset load_csv(const std::string& path, const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header row");
  const auto header = split_line(line);

  DatasetSchema sc = schema;
  if (sc.x.empty()) sc.x = infer_numbered(header, "x");
  if (sc.u.empty()) sc.u = infer_numbered(header, "u");
  if (sc.x.empty()) throw DataError(path + ": no X columns found");

  const int c_id = find_col(header, sc.id);
  const int c_a = find_col(header, sc.treatment);
  const int c_y = find_col(header, sc.outcome);
  const int c_val = find_col(header, sc.validation);
  const int c_pi = find_col(header, sc.pi);  // optional
  for (auto [col, name] : {std::pair{c_id, sc.id}, {c_a, sc.treatment},
                           {c_y, sc.outcome}, {c_val, sc.validation}})
    if (col < 0) throw DataError(path + ": missing column '" + name + "'");
  std::vector<int> c_x, c_u;
  for (const auto& nm : sc.x) {
    const int c = find_col(header, nm);
    if (c < 0) throw DataError(path + ": missing column '" + nm + "'");
    c_x.push_back(c);
  }
  for (const auto& nm : sc.u) {
    const int c = find_col(header, nm);
    if (c < 0) throw DataError(path + ": missing column '" + nm + "'");
    c_u.push_back(c);
  }

  const int p = static_cast<int>(c_x.size());
  const int q = static_cast<int>(c_u.size());
  std::vector<std::string> ids;
  std::vector<double> av, yv, piv;
  std::vector<char> flags;
  std::vector<double> xv, uv;  // row-major staging
  int ignored_u_cells = 0;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError(path + ": row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    ids.push_back(cells[c_id]);
    av.push_back(parse_double(cells[c_a], sc.treatment, row));
    yv.push_back(parse_double(cells[c_y], sc.outcome, row));
    for (int k = 0; k < p; ++k) xv.push_back(parse_double(cells[c_x[k]], sc.x[k], row));
    const double flag = parse_double(cells[c_val], sc.validation, row);
    if (flag != 0.0 && flag != 1.0)
      throw DataError(path + ": row " + std::to_string(row) + ": validation flag must be 0 or 1");
    flags.push_back(flag == 1.0);
    for (int k = 0; k < q; ++k) {
      const std::string& cell = cells[c_u[k]];
      if (flag == 1.0) {
        if (cell.empty())
          throw DataError(path + ": row " + std::to_string(row) +
                          ": incomplete confounder on validation unit");
        uv.push_back(parse_double(cell, sc.u[k], row));
      } else {
        if (!cell.empty()) ++ignored_u_cells;
        uv.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    if (c_pi >= 0) piv.push_back(parse_double(cells[c_pi], sc.pi, row));
  }

  const int n = static_cast<int>(av.size());
  FusedDataset d;
  d.ids = std::move(ids);
  d.a = Eigen::Map<Eigen::VectorXd>(av.data(), n);
  d.y = Eigen::Map<Eigen::VectorXd>(yv.data(), n);
  d.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      xv.data(), n, p);
  d.u = q > 0 ? Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                    uv.data(), n, q)
              : Eigen::MatrixXd(n, 0);
  d.in_validation = std::move(flags);
  if (c_pi >= 0) {
    d.pi = Eigen::Map<Eigen::VectorXd>(piv.data(), n);
    d.design = SamplingDesign::KnownInclusion;
  }
  if (ignored_u_cells > 0)
    d.load_warnings.push_back("ignored " + std::to_string(ignored_u_cells) +
                              " U cells on non-validation rows");
  d.validate();
  int val_treated = 0, val_control = 0;
  for (int i = 0; i < n; ++i)
    if (d.in_validation[i]) (d.a[i] == 1.0 ? val_treated : val_control)++;
  if (val_treated < 2 || val_control < 2)
    d.load_warnings.push_back("a validation arm has a single unit; model fits may fail");
  return d;
}

void save_csv(const FusedDataset& d, const std::string& path, const DatasetSchema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  DatasetSchema sc = schema;
  if (sc.x.empty())
    for (int k = 1; k <= d.p(); ++k) sc.x.push_back("x" + std::to_string(k));
  if (sc.u.empty())
    for (int k = 1; k <= d.q(); ++k) sc.u.push_back("u" + std::to_string(k));
  out << sc.id << ',' << sc.treatment << ',' << sc.outcome;
  for (const auto& nm : sc.x) out << ',' << nm;
  for (const auto& nm : sc.u) out << ',' << nm;
  out << ',' << sc.validation;
  const bool with_pi = d.design == SamplingDesign::KnownInclusion;
  if (with_pi) out << ',' << sc.pi;
  out << '\n';
  for (int i = 0; i < d.n1(); ++i) {
    out << d.ids[i] << ',' << format_double(d.a[i]) << ',' << format_double(d.y[i]);
    for (int k = 0; k < d.p(); ++k) out << ',' << format_double(d.x(i, k));
    for (int k = 0; k < d.q(); ++k) {
      out << ',';
      if (d.in_validation[i]) out << format_double(d.u(i, k));
    }
    out << ',' << (d.in_validation[i] ? '1' : '0');
    if (with_pi) out << ',' << format_double(d.pi[i]);
    out << '\n';
  }
}

DataView validation_view(const FusedDataset& d) {
  DataView v;
  v.data = &d;
  v.rows = d.validation_rows();
  v.expose_u = true;
  const int n = v.size();
  v.weights = Eigen::VectorXd::Ones(n);
  if (d.design == SamplingDesign::KnownInclusion)
    for (int i = 0; i < n; ++i) v.weights[i] = 1.0 / d.pi[v.rows[i]];
  return v;
}

DataView main_view(const FusedDataset& d) {
  DataView v;
  v.data = &d;
  v.rows.resize(d.n1());
  for (int i = 0; i < d.n1(); ++i) v.rows[i] = i;
  v.expose_u = false;
  v.weights = Eigen::VectorXd::Ones(d.n1());
  return v;
}

}  // namespace causalfuse
