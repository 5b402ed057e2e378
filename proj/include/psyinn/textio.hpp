#pragma once

// Small text helpers shared by the file formats.

#include <string>
#include <string_view>
#include <vector>

namespace psyinn::text {

// Shortest representation that round-trips a double exactly.
std::string fmt(double v);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Full-string numeric parsing; false on any trailing garbage.
bool parse_double(std::string_view s, double& out);
bool parse_int(std::string_view s, long long& out);

// Parses or throws psyinn::Error naming `what`.
double to_double(std::string_view s, std::string_view what);
long long to_int(std::string_view s, std::string_view what);
std::vector<double> to_doubles(std::string_view s, char sep, std::string_view what);

}  // namespace psyinn::text
