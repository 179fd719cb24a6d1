#pragma once

#include <stdexcept>
#include <string>
#include <system_error>

namespace ufo {

// Base class for everything thrown by the framework.
class UfoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Rejected configuration: bad chunk geometry, inverted water marks, zero-sized
// elements, malformed backing sources.
class ConfigError : public UfoError {
public:
    using UfoError::UfoError;
};

// Operation applied in the wrong lifecycle state: double free, double init,
// API call after shutdown.
class StateError : public UfoError {
public:
    using UfoError::UfoError;
};

// Element index or byte offset outside the object.
class RangeError : public UfoError {
public:
    using UfoError::UfoError;
};

// The object's population function failed earlier; every access keeps
// reporting the stored reason.
class PoisonedError : public UfoError {
public:
    using UfoError::UfoError;
};

// OS-level failure: mmap, userfaultfd ioctls, cache-file I/O.
class SystemError : public UfoError {
public:
    SystemError(const std::string& what, int err)
        : UfoError(what + ": " + std::generic_category().message(err)), code_(err) {}
    int error_code() const noexcept { return code_; }

private:
    int code_;
};

} // namespace ufo
