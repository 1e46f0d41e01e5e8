#include "mmdesign/log.hpp"

#include <atomic>
#include <mutex>

namespace mmdesign::log {

namespace {
std::atomic<Level> g_level{Level::Info};
std::mutex g_mutex;
}  // namespace

Level level() { return g_level.load(); }
void set_level(Level level) { g_level.store(level); }

void write(Level level, const std::string& message) {
  static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(g_mutex);
  std::cerr << "[" << kTags[static_cast<int>(level)] << "] " << message << "\n";
}

}  // namespace mmdesign::log
