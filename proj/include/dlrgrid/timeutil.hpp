#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace dlrgrid::timeutil {

using Hours = std::chrono::sys_time<std::chrono::hours>;

/// "YYYY-MM-DD"; throws InvalidArgument.
std::chrono::sys_days parse_date(std::string_view text);
std::string format_date(std::chrono::sys_days day);

/// "YYYY-MM-DDTHH:00"
std::string format_timestamp(Hours t);
Hours parse_timestamp(std::string_view text);

int hour_of_day(Hours t);
/// 1-based day of year.
int day_of_year(Hours t);
/// 0 = winter (DJF), 1 = spring (MAM), 2 = summer (JJA), 3 = autumn (SON).
int season(Hours t);

}  // namespace dlrgrid::timeutil
