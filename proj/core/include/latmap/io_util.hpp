#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace latmap::io {

// Formats a double so that it round-trips exactly and identically on every
// run (plain %.17g, no locale).
std::string fmt_double(double v);

// Writes content to path atomically (tmp file in the same directory, then
// rename). Creates parent directories as needed.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);  // throws artifact_error if absent

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

// Minimal CSV support: a header line plus numeric rows; all rows must have
// header-sized width. Doubles are written with fmt_double.
void write_csv(const std::filesystem::path& path, const std::string& header,
               const std::vector<std::vector<double>>& rows);
struct Csv {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};
Csv read_csv(const std::filesystem::path& path);

}  // namespace latmap::io
