#include "boltznce/artifacts.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace boltznce {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::size_t CsvTable::col(const std::string& name) const {
    for (std::size_t i = 0; i < headers.size(); ++i)
        if (headers[i] == name) return i;
    throw IoError("CSV column '" + name + "' not found");
}

std::vector<double> CsvTable::columns(const std::vector<std::string>& names) const {
    std::vector<std::size_t> idx;
    for (const auto& n : names) idx.push_back(col(n));
    std::vector<double> out(rows() * names.size());
    for (std::size_t r = 0; r < rows(); ++r)
        for (std::size_t c = 0; c < idx.size(); ++c) out[r * idx.size() + c] = at(r, idx[c]);
    return out;
}

void write_csv(const std::string& path, const CsvTable& table) {
    require(!table.headers.empty(), "write_csv: need headers");
    require(table.values.size() % table.headers.size() == 0, "write_csv: ragged data");
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (std::size_t c = 0; c < table.headers.size(); ++c) {
        if (c) f << ',';
        f << table.headers[c];
    }
    f << '\n';
    const std::size_t cols = table.cols();
    for (std::size_t r = 0; r < table.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) f << ',';
            f << format_double(table.values[r * cols + c]);
        }
        f << '\n';
    }
    if (!f) throw IoError("failed writing: " + path);
}

CsvTable read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty CSV: " + path);
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.headers.push_back(cell);
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::size_t c = 0;
        while (std::getline(ls, cell, ',')) {
            try {
                t.values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError("non-numeric CSV cell '" + cell + "' in " + path);
            }
            ++c;
        }
        if (c != t.headers.size()) throw IoError("ragged CSV row in " + path);
    }
    return t;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << j.dump(2) << '\n';
    if (!f) throw IoError("failed writing: " + path);
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw IoError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

std::string json_hash(const nlohmann::json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

void make_dirs(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

}  // namespace boltznce
