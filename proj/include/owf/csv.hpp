#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <stdexcept>
#include <system_error>
#include <type_traits>
#include <vector>

#include "owf/errors.hpp"

namespace owf {

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double value)
{
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buffer[64];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

inline double parse_double(std::string_view text)
{
    double value = 0.0;
    const auto result = std::from_chars(text.data(), text.data() + text.size(), value);
    if (result.ec != std::errc() || result.ptr != text.data() + text.size())
        throw InvalidInput("not a number: '" + std::string(text) + "'");
    return value;
}

/// Minimal CSV writer: header row then rows of already-formatted cells.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, std::initializer_list<std::string_view> header) : out_(path)
    {
        if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
        bool first = true;
        for (auto h : header) {
            if (!first) out_ << ',';
            out_ << h;
            first = false;
        }
        out_ << '\n';
    }

    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path)
    {
        if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
        write_row(header);
    }

    void write_row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i > 0) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    template <typename... Cells>
    void row(const Cells&... cells)
    {
        std::vector<std::string> formatted;
        (formatted.push_back(cell(cells)), ...);
        write_row(formatted);
    }

private:
    static std::string cell(double v) { return format_double(v); }
    static std::string cell(const std::string& v) { return v; }
    static std::string cell(const char* v) { return v; }
    template <typename Int>
        requires std::is_integral_v<Int>
    static std::string cell(Int v)
    {
        return std::to_string(v);
    }

    std::ofstream out_;
};

/// Reads a CSV file into a header and rows of raw cells (no quoting support).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw InvalidInput("missing column '" + std::string(name) + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> cells;
    std::string current;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(current);
            current.clear();
        } else if (c != '\r') {
            current.push_back(c);
        }
    }
    cells.push_back(current);
    return cells;
}

inline CsvTable read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    CsvTable table;
    std::string line;
    if (std::getline(in, line)) table.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        table.rows.push_back(split_csv_line(line));
    }
    return table;
}

}  // namespace owf
