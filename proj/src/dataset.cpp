#include "dbce/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dbce {

int Dataset::n_treated() const {
  int n1 = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) n1 += d[i];
  return n1;
}

Dataset Dataset::make(MatrixXd x, VectorXi d, VectorXd y) {
  const Eigen::Index n = y.size();
  if (n < 2) throw std::invalid_argument("dataset needs at least 2 rows");
  if (x.rows() != n || d.size() != n) {
    throw std::invalid_argument("x, d, y row counts differ");
  }
  if (x.cols() < 1) throw std::invalid_argument("dataset needs at least one covariate");
  int n1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d[i] != 0 && d[i] != 1) {
      throw std::invalid_argument("invalid treatment value at row " + std::to_string(i));
    }
    n1 += d[i];
    if (!std::isfinite(y[i])) {
      throw std::invalid_argument("non-finite outcome at row " + std::to_string(i));
    }
  }
  if (n1 == 0 || n1 == n) {
    throw std::invalid_argument("both treatment groups must be non-empty");
  }
  if (!x.allFinite()) throw std::invalid_argument("non-finite covariate entry");
  Dataset out;
  out.x = std::move(x);
  out.d = std::move(d);
  out.y = std::move(y);
  return out;
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
  MatrixXd xs(static_cast<Eigen::Index>(rows.size()), x.cols());
  VectorXi ds(static_cast<Eigen::Index>(rows.size()));
  VectorXd ys(static_cast<Eigen::Index>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    xs.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    ds[static_cast<Eigen::Index>(i)] = d[rows[i]];
    ys[static_cast<Eigen::Index>(i)] = y[rows[i]];
  }
  return Dataset::make(std::move(xs), std::move(ds), std::move(ys));
}

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

double parse_cell(const std::string& s, int row, const std::string& col) {
  if (s.empty()) {
    throw std::invalid_argument("empty cell in column " + col + " at data row " +
                                std::to_string(row));
  }
  size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("non-numeric cell '" + s + "' in column " + col +
                                " at data row " + std::to_string(row));
  }
  if (pos != s.size()) {
    throw std::invalid_argument("non-numeric cell '" + s + "' in column " + col +
                                " at data row " + std::to_string(row));
  }
  return v;
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty file: " + path);
  const auto header = split_line(line);
  if (header.size() < 3 || header[0] != "y" || header[1] != "d") {
    throw std::invalid_argument("header must be y,d,x1,...,xK");
  }
  const int k = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < k; ++j) {
    if (header[static_cast<size_t>(j) + 2] != "x" + std::to_string(j + 1)) {
      throw std::invalid_argument("unexpected covariate column '" +
                                  header[static_cast<size_t>(j) + 2] + "', expected x" +
                                  std::to_string(j + 1));
    }
  }

  std::vector<double> ys;
  std::vector<int> ds;
  std::vector<double> xs;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument("row " + std::to_string(row) + " has " +
                                  std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(header.size()));
    }
    ys.push_back(parse_cell(cells[0], row, "y"));
    const double dv = parse_cell(cells[1], row, "d");
    if (dv != 0.0 && dv != 1.0) {
      throw std::invalid_argument("invalid treatment value '" + cells[1] +
                                  "' at data row " + std::to_string(row));
    }
    ds.push_back(static_cast<int>(dv));
    for (int j = 0; j < k; ++j) {
      xs.push_back(parse_cell(cells[static_cast<size_t>(j) + 2], row,
                              "x" + std::to_string(j + 1)));
    }
    ++row;
  }
  if (row < 2) throw std::invalid_argument("fewer than 2 data rows in " + path);

  MatrixXd x(row, k);
  VectorXi d(row);
  VectorXd y(row);
  for (int i = 0; i < row; ++i) {
    y[i] = ys[static_cast<size_t>(i)];
    d[i] = ds[static_cast<size_t>(i)];
    for (int j = 0; j < k; ++j) x(i, j) = xs[static_cast<size_t>(i) * k + j];
  }
  return Dataset::make(std::move(x), std::move(d), std::move(y));
}

void write_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "y,d";
  for (int j = 0; j < data.k(); ++j) out << ",x" << (j + 1);
  out << "\n";
  char buf[32];
  for (int i = 0; i < data.n(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", data.y[i]);
    out << buf << "," << data.d[i];
    for (int j = 0; j < data.k(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.x(i, j));
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

}  // namespace dbce
