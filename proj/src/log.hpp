#pragma once

namespace ufo {

// 0 = warnings only (default), 1 = +info, 2 = +debug. Set with UFO_LOG.
int log_level();

void log_warn(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void log_info(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void log_debug(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

} // namespace ufo
