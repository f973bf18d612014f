#include "counts/csv.hpp"

#include "counts/error.hpp"

#include <charconv>
#include <system_error>

namespace counts::csv {

std::string format(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError("not a number: '" + std::string(s) + "'");
    return v;
}

std::int64_t parse_int(std::string_view s) {
    std::int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw FormatError("not an integer: '" + std::string(s) + "'");
    return v;
}

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw FormatError("missing column '" + std::string(name) + "'");
}

namespace {

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

}  // namespace

Table read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingFileError(path.string(), "cannot open " + path.string());
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split(line);
        if (fields.size() != t.header.size())
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}

Writer::Writer(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path), width_(header.size()) {
    if (!out_) throw MissingFileError(path.string(), "cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
}

Writer& Writer::operator<<(double v) { return *this << format(v); }

Writer& Writer::operator<<(std::int64_t v) { return *this << std::to_string(v); }

Writer& Writer::operator<<(const std::string& v) {
    if (field_ > 0) out_ << ',';
    out_ << v;
    ++field_;
    return *this;
}

void Writer::end_row() {
    if (field_ != width_) throw FormatError("csv row has " + std::to_string(field_) + " fields, header has " +
                                            std::to_string(width_));
    out_ << '\n';
    field_ = 0;
}

}  // namespace counts::csv
