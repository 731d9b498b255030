#pragma once

#include <string>

namespace p2s {

/// Checks "YYYY-MM-DD" with a real calendar date. Throws DataError.
void validate_date(const std::string& date);

/// `date` plus `days` (may be negative), as YYYY-MM-DD.
std::string add_days(const std::string& date, int days);

}  // namespace p2s
