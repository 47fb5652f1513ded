#pragma once

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <utility>

#include "chronicle/error.hpp"

namespace chronicle {

/// Calendar day, stored as days since 1970-01-01 (UTC).
struct Date {
  std::int32_t days{0};

  auto operator<=>(const Date&) const = default;

  std::chrono::year_month_day ymd() const {
    return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days}}};
  }
};

inline Date make_date(int y, unsigned m, unsigned d) {
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) {
    throw Error(Errc::ParseError, "invalid calendar date " + std::to_string(y) + "-" +
                                      std::to_string(m) + "-" + std::to_string(d));
  }
  return Date{static_cast<std::int32_t>(std::chrono::sys_days{ymd}.time_since_epoch().count())};
}

inline Date add_days(Date d, std::int64_t n) { return Date{static_cast<std::int32_t>(d.days + n)}; }

/// Parses "YYYY-MM-DD".
inline Date parse_date(std::string_view s) {
  auto bad = [&] { return Error(Errc::ParseError, "bad date '" + std::string(s) + "'"); };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
  int y = 0;
  unsigned m = 0, d = 0;
  auto parse = [&](std::string_view part, auto& out) {
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), out);
    if (ec != std::errc{} || p != part.data() + part.size()) throw bad();
  };
  parse(s.substr(0, 4), y);
  parse(s.substr(5, 2), m);
  parse(s.substr(8, 2), d);
  return make_date(y, m, d);
}

inline std::string format_date(Date d) {
  const auto ymd = d.ymd();
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

/// Completed years between birth and `at` (0 if `at` precedes birth).
inline int completed_years(Date birth, Date at) {
  const auto b = birth.ymd();
  const auto a = at.ymd();
  int years = static_cast<int>(a.year()) - static_cast<int>(b.year());
  if (std::pair{static_cast<unsigned>(a.month()), static_cast<unsigned>(a.day())} <
      std::pair{static_cast<unsigned>(b.month()), static_cast<unsigned>(b.day())}) {
    --years;
  }
  return years < 0 ? 0 : years;
}

inline double years_between(Date from, Date to) { return (to.days - from.days) / 365.25; }

}  // namespace chronicle
