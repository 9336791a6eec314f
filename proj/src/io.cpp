#include "goatlab/io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "goatlab/errors.hpp"

namespace goatlab {

void write_matrix(std::ostream& out, const Matrix& m) {
  out << m.rows() << " " << m.cols() << "\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j > 0) out << " ";
      out << m(i, j);
    }
    out << "\n";
  }
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw run_error("write_matrix: cannot open " + path.string());
  write_matrix(out, m);
}

Matrix read_matrix(std::istream& in) {
  std::size_t rows = 0, cols = 0;
  if (!(in >> rows >> cols)) throw run_error("read_matrix: missing 'rows cols' header");
  std::vector<double> data(rows * cols);
  for (double& v : data) {
    if (!(in >> v)) throw run_error("read_matrix: truncated value list");
  }
  return Matrix(rows, cols, std::move(data));
}

Matrix read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw run_error("read_matrix: cannot open " + path.string());
  return read_matrix(in);
}

}  // namespace goatlab
