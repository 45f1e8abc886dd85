#include "latmap/io_util.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "latmap/errors.hpp"

namespace fs = std::filesystem;

namespace latmap::io {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path dir = path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw artifact_error("cannot open for write: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw artifact_error("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw artifact_error("missing artifact: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw artifact_error("malformed json: " + path.string());
  return j;
}

void write_csv(const fs::path& path, const std::string& header,
               const std::vector<std::vector<double>>& rows) {
  std::string out = header;
  out += '\n';
  for (const auto& row : rows) {
    for (size_t k = 0; k < row.size(); ++k) {
      if (k) out += ',';
      out += fmt_double(row[k]);
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

Csv read_csv(const fs::path& path) {
  const std::string text = read_file(path);
  Csv csv;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw artifact_error("empty csv: " + path.string());
  {
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) csv.columns.push_back(col);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(csv.columns.size());
    const char* p = line.c_str();
    char* end = nullptr;
    for (size_t k = 0; k < csv.columns.size(); ++k) {
      row.push_back(std::strtod(p, &end));
      if (p == end) throw artifact_error("bad csv row in " + path.string() + ": " + line);
      p = (*end == ',') ? end + 1 : end;
    }
    csv.rows.push_back(std::move(row));
  }
  return csv;
}

}  // namespace latmap::io
