#include "p2s/date.hpp"

#include "p2s/error.hpp"

#include <chrono>
#include <cstdio>

namespace p2s {

namespace {

std::chrono::year_month_day parse(const std::string& date) {
  const auto bad = [&] { return DataError("malformed date '" + date + "', expected YYYY-MM-DD"); };
  if (date.size() != 10 || date[4] != '-' || date[7] != '-') throw bad();
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (date[i] < '0' || date[i] > '9') throw bad();
  const std::chrono::year_month_day ymd{std::chrono::year{std::stoi(date.substr(0, 4))},
                                        std::chrono::month{static_cast<unsigned>(std::stoi(date.substr(5, 2)))},
                                        std::chrono::day{static_cast<unsigned>(std::stoi(date.substr(8, 2)))}};
  if (!ymd.ok()) throw bad();
  return ymd;
}

}  // namespace

void validate_date(const std::string& date) { parse(date); }

std::string add_days(const std::string& date, int days) {
  const std::chrono::year_month_day d{std::chrono::sys_days{parse(date)} + std::chrono::days{days}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

}  // namespace p2s
