#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ddu/errors.hpp"

namespace ddu {

using Json = nlohmann::json;

/// 17 significant digits, enough for exact round-trip of a double.
std::string format_double(double v);
double parse_double(std::string_view s);

std::vector<std::string> split_csv_line(std::string_view line);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

/// j[field], or ConfigError naming the field and its context.
const Json& json_require(const Json& j, const char* field, const std::string& where);

template <typename T>
T json_field(const Json& j, const char* field, const std::string& where) {
  const Json& v = json_require(j, field, where);
  try {
    return v.get<T>();
  } catch (const Json::exception&) {
    throw ConfigError("field '" + std::string(field) + "' in " + where + " has the wrong type");
  }
}

}  // namespace ddu
