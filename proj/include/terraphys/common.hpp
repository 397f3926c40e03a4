#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace terraphys {

// Thrown by every module on contract violations. The message always names
// the operation and the offending values.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    format_into(os, rest...);
}

} // namespace detail

template <typename... Args>
std::string cat(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
    throw Error(cat(args...));
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ----------------------------------------------------------------------------
// Logging. Level comes from TERRAPHYS_LOG={error,info,debug}; default info.

enum class LogLevel : int { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("TERRAPHYS_LOG");
        if (!env) return LogLevel::info;
        std::string s(env);
        if (s == "error") return LogLevel::error;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

template <typename... Args>
void log_at(LogLevel lvl, const Args&... args) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    const char* tag = lvl == LogLevel::error ? "error" : (lvl == LogLevel::info ? "info" : "debug");
    std::fprintf(stderr, "[terraphys %s] %s\n", tag, cat(args...).c_str());
}

template <typename... Args>
void log_info(const Args&... args) { log_at(LogLevel::info, args...); }
template <typename... Args>
void log_debug(const Args&... args) { log_at(LogLevel::debug, args...); }
template <typename... Args>
void log_error(const Args&... args) { log_at(LogLevel::error, args...); }

} // namespace terraphys
