#include "log.hpp"

#include <cstdarg>
#include <cstdio>
#include <cstdlib>

namespace ufo {

int log_level() {
    static const int cached = [] {
        const char* v = std::getenv("UFO_LOG");
        if (!v || !*v) return 0;
        return std::atoi(v);
    }();
    return cached;
}

namespace {

void vlog(const char* tag, const char* fmt, va_list ap) {
    std::fprintf(stderr, "[ufo] %s: ", tag);
    std::vfprintf(stderr, fmt, ap);
    std::fputc('\n', stderr);
}

} // namespace

void log_warn(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    vlog("warn", fmt, ap);
    va_end(ap);
}

void log_info(const char* fmt, ...) {
    if (log_level() < 1) return;
    va_list ap;
    va_start(ap, fmt);
    vlog("info", fmt, ap);
    va_end(ap);
}

void log_debug(const char* fmt, ...) {
    if (log_level() < 2) return;
    va_list ap;
    va_start(ap, fmt);
    vlog("debug", fmt, ap);
    va_end(ap);
}

} // namespace ufo
