#pragma once

#include <iosfwd>
#include <string>

#include <Eigen/Core>

namespace perfaug {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Rows are learners, columns are attempts.
using AugmentedMatrix = Matrix;

/// Plain CSV, no header, fixed 8 decimal places.
void write_matrix_csv(std::ostream& out, const Matrix& m, int decimals = 8);
std::string matrix_to_csv(const Matrix& m, int decimals = 8);

/// Parses a numeric CSV block; a non-numeric first row is treated as a header.
/// Throws ParseError on ragged rows or non-numeric cells.
Matrix parse_matrix_csv(const std::string& text);

}  // namespace perfaug
