#include "psyinn/textio.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "psyinn/error.hpp"

namespace psyinn::text {

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return std::to_string(v);
  return std::string(buf, ptr);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const std::size_t b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const std::size_t e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_int(std::string_view s, long long& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc() && ptr == s.data() + s.size()) return true;
  // Accept integral floats such as "3.0".
  double d = 0.0;
  if (!parse_double(s, d) || d != std::floor(d) || std::abs(d) > 9e15) return false;
  out = static_cast<long long>(d);
  return true;
}

double to_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  if (!parse_double(s, v)) throw Error(std::string(what) + ": not a number: '" + std::string(s) + "'");
  return v;
}

long long to_int(std::string_view s, std::string_view what) {
  long long v = 0;
  if (!parse_int(s, v)) throw Error(std::string(what) + ": not an integer: '" + std::string(s) + "'");
  return v;
}

std::vector<double> to_doubles(std::string_view s, char sep, std::string_view what) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& part : split(s, sep)) out.push_back(to_double(part, what));
  return out;
}

}  // namespace psyinn::text
