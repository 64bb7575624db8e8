#include "dosing/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace dosing {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::Warn)};
std::mutex g_mutex;

void emit(LogLevel level, const char* tag, const std::string& message) {
    if (static_cast<int>(level) > g_level.load()) return;
    std::lock_guard lock(g_mutex);
    std::cerr << '[' << tag << "] " << message << '\n';
}
}  // namespace

void set_log_level(LogLevel level) { g_level.store(static_cast<int>(level)); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_warn(const std::string& message) { emit(LogLevel::Warn, "warn", message); }
void log_info(const std::string& message) { emit(LogLevel::Info, "info", message); }
void log_debug(const std::string& message) { emit(LogLevel::Debug, "debug", message); }

}  // namespace dosing
