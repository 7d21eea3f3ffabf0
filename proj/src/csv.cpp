#include "advspheres/csv.hpp"

#include <charconv>
#include <sstream>

namespace advspheres::csv {

std::string format(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) {
            throw DataError("cannot create directory " + path.parent_path().string() + ": " +
                            ec.message());
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open " + path.string() + " for writing");
    }
    return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) {
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == sep) {
        cells.emplace_back();
    }
    return cells;
}

Table read(const std::filesystem::path& path, bool has_header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    Table table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (has_header && table.header.empty() && line_no == 1) {
            table.header = split(line);
            continue;
        }
        std::vector<double> row;
        for (const auto& cell : split(line)) {
            double v = 0.0;
            const char* first = cell.data();
            const char* last = cell.data() + cell.size();
            while (first < last && *first == ' ') {
                ++first;
            }
            auto res = std::from_chars(first, last, v);
            if (res.ec != std::errc() || res.ptr != last) {
                throw DataError(path.string() + ":" + std::to_string(line_no) +
                                ": not a number: '" + cell + "'");
            }
            row.push_back(v);
        }
        if (!table.rows.empty() && row.size() != table.rows.front().size()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": inconsistent column count");
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_rows(std::ostream& out, const Eigen::Ref<const Matrix>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) {
                out << ',';
            }
            out << format(m(i, j));
        }
        out << '\n';
    }
}

}  // namespace advspheres::csv
