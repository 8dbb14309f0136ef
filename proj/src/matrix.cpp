#include "perfaug/matrix.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <sstream>
#include <vector>

#include "perfaug/error.hpp"

namespace perfaug {

void write_matrix_csv(std::ostream& out, const Matrix& m, int decimals) {
    char buf[64];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.*f", decimals, m(r, c));
            if (c) out << ',';
            out << buf;
        }
        out << '\n';
    }
}

std::string matrix_to_csv(const Matrix& m, int decimals) {
    std::ostringstream os;
    write_matrix_csv(os, m, decimals);
    return os.str();
}

namespace {

bool parse_number(const std::string& token, double& value) {
    std::size_t b = token.find_first_not_of(" \t\"");
    std::size_t e = token.find_last_not_of(" \t\"");
    if (b == std::string::npos) return false;
    std::string t = token.substr(b, e - b + 1);
    char* end = nullptr;
    errno = 0;
    value = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size() && errno == 0;
}

}  // namespace

Matrix parse_matrix_csv(const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<double> row;
        std::stringstream ls(line);
        std::string tok;
        bool numeric = true;
        while (std::getline(ls, tok, ',')) {
            double v = 0.0;
            if (!parse_number(tok, v)) {
                numeric = false;
                break;
            }
            row.push_back(v);
        }
        if (!numeric) {
            if (rows.empty() && lineno == 1) continue;  // header
            throw ParseError("non-numeric value in CSV line " + std::to_string(lineno), lineno);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError("ragged CSV: line " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                                 " columns, expected " + std::to_string(rows.front().size()),
                             lineno);
        rows.push_back(std::move(row));
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return m;
}

}  // namespace perfaug
