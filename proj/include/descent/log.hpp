#pragma once

// stderr logging with verbosity from the DESCENT_LOG environment variable
// (quiet | info | debug; default info).  DESCENT_TIMING=1 enables wall-clock
// fields in training logs; they default to 0 so that identical runs produce
// byte-identical artifacts.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace descent {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("DESCENT_LOG");
    if (!env) return LogLevel::info;
    if (std::strcmp(env, "quiet") == 0) return LogLevel::quiet;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline bool timing_enabled() {
  static const bool on = [] {
    const char* env = std::getenv("DESCENT_TIMING");
    return env && std::strcmp(env, "1") == 0;
  }();
  return on;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::fprintf(stderr, "[debug] %s\n", msg.c_str());
}

inline void log_warn(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

}  // namespace descent
