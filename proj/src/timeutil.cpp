#include "dlrgrid/timeutil.hpp"

#include <cstdio>
#include <cstdlib>

#include "dlrgrid/errors.hpp"

namespace dlrgrid::timeutil {

using namespace std::chrono;

sys_days parse_date(std::string_view text) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const std::string s(text);
  if (std::sscanf(s.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3) {
    throw InvalidArgument("bad date '" + s + "', expected YYYY-MM-DD");
  }
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw InvalidArgument("invalid calendar date '" + s + "'");
  return sys_days{ymd};
}

std::string format_date(sys_days day_point) {
  const year_month_day ymd{day_point};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                unsigned(ymd.day()));
  return buf;
}

std::string format_timestamp(Hours t) {
  const auto day_point = floor<days>(t);
  const auto h = (t - day_point).count();
  char buf[16];
  std::snprintf(buf, sizeof buf, "T%02d:00", static_cast<int>(h));
  return format_date(day_point) + buf;
}

Hours parse_timestamp(std::string_view text) {
  const auto pos = text.find('T');
  if (pos == std::string_view::npos || pos + 3 > text.size()) {
    throw InvalidArgument("bad timestamp '" + std::string(text) + "'");
  }
  const sys_days d = parse_date(text.substr(0, pos));
  const std::string hh(text.substr(pos + 1, 2));
  const int h = std::atoi(hh.c_str());
  if (h < 0 || h > 23) throw InvalidArgument("bad hour in timestamp '" + std::string(text) + "'");
  return Hours{d} + hours{h};
}

int hour_of_day(Hours t) { return static_cast<int>((t - floor<days>(t)).count()); }

int day_of_year(Hours t) {
  const auto d = floor<days>(t);
  const year_month_day ymd{d};
  return static_cast<int>((d - sys_days{ymd.year() / January / 1}).count()) + 1;
}

int season(Hours t) {
  const unsigned m = unsigned(year_month_day{floor<days>(t)}.month());
  if (m == 12 || m <= 2) return 0;
  if (m <= 5) return 1;
  if (m <= 8) return 2;
  return 3;
}

}  // namespace dlrgrid::timeutil
