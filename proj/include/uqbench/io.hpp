#pragma once

// Small file helpers shared by the modules that persist artifacts.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace uqbench::io {

using json = nlohmann::ordered_json;

/// Shortest round-trip decimal representation; stable across runs.
std::string fmt_double(double x);

/// Opens a file for writing, creating parent directories. Throws IoError.
std::ofstream open_for_write(const std::filesystem::path& path, bool binary = false);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws IoError if absent.
  std::size_t column(std::string_view name) const;
};

/// Minimal CSV reader (comma separated, no quoting).
CsvTable read_csv(const std::filesystem::path& path);

/// Joins already-formatted fields with commas and a trailing newline.
std::string csv_line(const std::vector<std::string>& fields);

double parse_double(const std::string& s);
long long parse_int(const std::string& s);

}  // namespace uqbench::io
