#pragma once

#include <filesystem>
#include <iosfwd>

#include "goatlab/matrix.hpp"

namespace goatlab {

// Text fixture format: first line "rows cols", then the row-major values
// with 17 significant digits, one matrix row per line.
void write_matrix(std::ostream& out, const Matrix& m);
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(std::istream& in);
Matrix read_matrix(const std::filesystem::path& path);

}  // namespace goatlab
