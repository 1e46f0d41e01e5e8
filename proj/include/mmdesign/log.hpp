#pragma once

#include <iostream>
#include <sstream>
#include <string>

namespace mmdesign::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

Level level();
void set_level(Level level);
void write(Level level, const std::string& message);

template <typename... Args>
void warn(Args&&... args) {
  if (level() > Level::Warn) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::Warn, os.str());
}

template <typename... Args>
void info(Args&&... args) {
  if (level() > Level::Info) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::Info, os.str());
}

}  // namespace mmdesign::log
