#pragma once

#include <string>

namespace p2s {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, quiet = 4 };

/// Messages below this level are dropped. Defaults to info.
void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes "[level] message" to stderr.
void log(LogLevel level, const std::string& message);

inline void log_info(const std::string& m) { log(LogLevel::info, m); }
inline void log_warn(const std::string& m) { log(LogLevel::warn, m); }

}  // namespace p2s
