#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "spose/error.hpp"

namespace spose::tsv {

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            fields.emplace_back(line.substr(start));
            return fields;
        }
        fields.emplace_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

inline std::string strip_eol(std::string line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    return line;
}

// Shortest decimal form that round-trips a double exactly.
inline std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    double back = 0.0;
    if (std::sscanf(buf, "%lf", &back) == 1 && back == v) {
        for (int prec = 1; prec < 17; ++prec) {
            char shorter[48];
            std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
            if (std::sscanf(shorter, "%lf", &back) == 1 && back == v) {
                return shorter;
            }
        }
    }
    return buf;
}

inline long parse_long(const std::string& field, const std::string& path, long line) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw ParseError("expected an integer, got '" + field + "'", path, line);
    }
}

inline double parse_double(const std::string& field, const std::string& path, long line) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw ParseError("expected a number, got '" + field + "'", path, line);
    }
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path + " for reading");
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path + " for writing");
    return out;
}

}  // namespace spose::tsv
