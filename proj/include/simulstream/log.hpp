#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>

namespace simulstream::log {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Level comes from SIMULSTREAM_LOG (error|warn|info|debug), default warn.
inline Level threshold() {
  static const Level lvl = [] {
    const char* env = std::getenv("SIMULSTREAM_LOG");
    if (env == nullptr) return Level::kWarn;
    if (std::strcmp(env, "error") == 0) return Level::kError;
    if (std::strcmp(env, "warn") == 0) return Level::kWarn;
    if (std::strcmp(env, "info") == 0) return Level::kInfo;
    if (std::strcmp(env, "debug") == 0) return Level::kDebug;
    return Level::kWarn;
  }();
  return lvl;
}

inline std::mutex& mutex() {
  static std::mutex m;
  return m;
}

inline void write(Level lvl, const std::string& msg) {
  if (lvl > threshold()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lock(mutex());
  std::fprintf(stderr, "[simulstream %s] %s\n", names[static_cast<int>(lvl)],
               msg.c_str());
}

inline void error(const std::string& msg) { write(Level::kError, msg); }
inline void warn(const std::string& msg) { write(Level::kWarn, msg); }
inline void info(const std::string& msg) { write(Level::kInfo, msg); }
inline void debug(const std::string& msg) { write(Level::kDebug, msg); }

}  // namespace simulstream::log
