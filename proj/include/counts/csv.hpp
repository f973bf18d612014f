#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace counts::csv {

// Shortest decimal text that parses back to the identical double.
std::string format(double v);
double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Index of a header column; throws FormatError when absent.
    std::size_t column(std::string_view name) const;
};

// Plain comma-separated files without quoting; every row must match the header width.
Table read(const std::filesystem::path& path);

class Writer {
public:
    Writer(const std::filesystem::path& path, const std::vector<std::string>& header);

    Writer& operator<<(double v);
    Writer& operator<<(std::int64_t v);
    Writer& operator<<(int v) { return *this << static_cast<std::int64_t>(v); }
    Writer& operator<<(const std::string& v);
    void end_row();

private:
    std::ofstream out_;
    std::size_t width_;
    std::size_t field_ = 0;
};

}  // namespace counts::csv
