#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace rtcav {

// Shortest decimal that round-trips to the same double.
std::string format_double(double v);
// Fixed notation with `decimals` digits after the point.
std::string format_fixed(double v, int decimals);

double parse_double(std::string_view s);
long long parse_int(std::string_view s);

std::vector<std::string> split_csv_line(std::string_view line);
std::string trim(std::string_view s);

}  // namespace rtcav
