#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace droidlens::log {

enum class Level { Info, Warn, Error };

using Sink = std::function<void(Level, const std::string&)>;

namespace detail {
inline std::mutex& mutex() {
  static std::mutex m;
  return m;
}
inline Sink& sink() {
  static Sink s = [](Level level, const std::string& msg) {
    if (level == Level::Info) return;
    std::cerr << (level == Level::Warn ? "[warn] " : "[error] ") << msg << '\n';
  };
  return s;
}
}  // namespace detail

/// Installs a process-wide sink and returns the previous one.
inline Sink set_sink(Sink s) {
  std::lock_guard lock(detail::mutex());
  return std::exchange(detail::sink(), std::move(s));
}

inline void emit(Level level, const std::string& msg) {
  std::lock_guard lock(detail::mutex());
  if (detail::sink()) detail::sink()(level, msg);
}

inline void info(const std::string& msg) { emit(Level::Info, msg); }
inline void warn(const std::string& msg) { emit(Level::Warn, msg); }
inline void error(const std::string& msg) { emit(Level::Error, msg); }

}  // namespace droidlens::log
