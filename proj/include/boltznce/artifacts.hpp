#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "boltznce/common.hpp"

namespace boltznce {

/// Shortest 17-significant-digit decimal; round-trips doubles exactly.
std::string format_double(double v);

struct CsvTable {
    std::vector<std::string> headers;
    std::vector<double> values;  // row-major

    std::size_t cols() const { return headers.size(); }
    std::size_t rows() const { return headers.empty() ? 0 : values.size() / headers.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    /// Column index by header name; throws IoError when absent.
    std::size_t col(const std::string& name) const;
    /// Flat copy of the named columns, row-major.
    std::vector<double> columns(const std::vector<std::string>& names) const;
};

void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// FNV-1a over the canonical (sorted-key) JSON serialization, as a hex string.
std::string json_hash(const nlohmann::json& j);

bool file_exists(const std::string& path);
void make_dirs(const std::string& path);

}  // namespace boltznce
