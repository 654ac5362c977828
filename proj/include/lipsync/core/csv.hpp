#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lipsync/core/common.hpp"

namespace lipsync {

class CsvWriter {
public:
    CsvWriter() = default;

    CsvWriter(const std::string& path, const std::vector<std::string>& header) { open(path, header); }

    void open(const std::string& path, const std::vector<std::string>& header) {
        os_.open(path, std::ios::trunc);
        LIPSYNC_CHECK(os_.good(), IoError, "cannot open " + path);
        cols_ = header.size();
        for (size_t i = 0; i < header.size(); ++i) os_ << (i ? "," : "") << header[i];
        os_ << "\n";
    }

    bool is_open() const { return os_.is_open(); }

    void row(const std::vector<std::string>& cells) {
        LIPSYNC_CHECK(cells.size() == cols_, IoError, "csv row width mismatch");
        for (size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
        os_ << "\n";
    }

    void row(const std::vector<double>& cells) {
        std::vector<std::string> s;
        s.reserve(cells.size());
        for (double c : cells) {
            std::ostringstream ss;
            ss.precision(10);
            ss << c;
            s.push_back(ss.str());
        }
        row(s);
    }

    void flush() { os_.flush(); }

private:
    std::ofstream os_;
    size_t cols_ = 0;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw IoError("csv column not found: " + name);
    }

    double num(size_t r, int c) const { return std::stod(rows.at(r).at(static_cast<size_t>(c))); }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream is(path);
    LIPSYNC_CHECK(is.good(), IoError, "cannot open " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (first) {
            t.header = cells;
            first = false;
        } else {
            t.rows.push_back(cells);
        }
    }
    return t;
}

}  // namespace lipsync
