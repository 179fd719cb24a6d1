#include "ufo/fault_backend.hpp"

#include "ufo/errors.hpp"
#include "log.hpp"

#include <cstdio>
#include <unistd.h>

namespace ufo {

std::size_t page_size() {
    static const std::size_t cached = [] {
        long ps = ::sysconf(_SC_PAGESIZE);
        return ps > 0 ? static_cast<std::size_t>(ps) : 4096u;
    }();
    return cached;
}

std::size_t FaultBackend::process_resident_bytes() {
    // statm field 2 is resident pages; cheaper than parsing smaps.
    std::FILE* f = std::fopen("/proc/self/statm", "r");
    if (!f) return 0;
    unsigned long long size = 0, resident = 0;
    int n = std::fscanf(f, "%llu %llu", &size, &resident);
    std::fclose(f);
    if (n != 2) return 0;
    return static_cast<std::size_t>(resident) * page_size();
}

std::unique_ptr<FaultBackend> make_backend(BackendChoice choice) {
    switch (choice) {
    case BackendChoice::userfault:
        return make_userfault_backend();
    case BackendChoice::trap:
        return make_trap_backend();
    case BackendChoice::automatic:
        break;
    }
    if (userfault_available()) return make_userfault_backend();
    log_info("userfaultfd unavailable, falling back to trap backend");
    return make_trap_backend();
}

} // namespace ufo
