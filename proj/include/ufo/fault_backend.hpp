#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ufo/populate.hpp"

namespace ufo {

enum class AccessKind : std::uint8_t { unknown, read, write };

// One first-touch access notification.
struct FaultEvent {
    std::uintptr_t address = 0;
    AccessKind kind = AccessKind::unknown;
};

// A reserved virtual-address range whose first-touch accesses produce fault
// events. No physical memory is committed until install().
struct Region {
    std::uintptr_t base = 0;
    std::size_t length = 0;
    bool registered = false;

    explicit operator bool() const noexcept { return base != 0; }
};

enum class BackendKind { userfault, trap };

// OS-facing layer: reserves regions, delivers fault events, installs
// populated bytes into faulted pages, and hands reclaimed pages back to the
// kernel. reserve/release/install/reclaim/next_event are driven by the single
// fault-service thread; application threads interact only by touching memory.
class FaultBackend {
public:
    struct Event {
        enum class Kind { fault, timeout, closed } kind = Kind::timeout;
        FaultEvent fault{};
    };

    virtual ~FaultBackend() = default;

    virtual BackendKind kind() const = 0;

    // Reserves `length` bytes (positive page multiple) and registers them
    // with the fault-event source. Throws ConfigError/SystemError.
    virtual Region reserve(std::size_t length) = 0;

    // Unregisters and unmaps. Throws StateError on double release.
    virtual void release(Region& region) = 0;

    // Makes [byte_lo, byte_lo + bytes.size()) readable and writable with
    // exactly the given contents and resumes every thread blocked faulting in
    // the range. Offsets and length must be page-aligned. Installing over an
    // already-materialized page succeeds without rewriting where the facility
    // can tell.
    virtual void install(const Region& region, std::size_t byte_lo,
                         std::span<const std::byte> bytes) = 0;

    // Releases physical memory for a previously installed page-aligned range.
    // Subsequent access produces a fresh fault event. Harmless on
    // unmaterialized ranges.
    virtual void reclaim(const Region& region, std::size_t byte_lo, std::size_t length) = 0;

    // Blocks until an access to unmaterialized memory occurs, the timeout
    // (milliseconds, -1 = forever) elapses, or shutdown() is called.
    virtual Event next_event(int timeout_ms) = 0;

    // Readable when next_event(0) would yield a fault.
    virtual int poll_fd() const = 0;

    // True when events are parked internally (e.g. picked up while the
    // populate guard was active) and next_event(0) must be drained first.
    virtual bool has_pending() const { return false; }

    // Makes next_event return closed from now on.
    virtual void shutdown() = 0;

    // Runs `populate` on the calling service thread while watching for
    // accesses to unmaterialized registered memory from that same thread.
    // Such accesses are unblocked safely, collected into `nested`, and the
    // return value becomes populate_nested_access. Safe to nest.
    virtual int run_guarded(const std::function<int()>& populate,
                            std::vector<std::uintptr_t>& nested) = 0;

    // Bytes of physical memory this process currently has resident.
    static std::size_t process_resident_bytes();
};

// System page size, cached.
std::size_t page_size();

// True when the kernel grants userfaultfd with the features the userfault
// backend needs.
bool userfault_available();

std::unique_ptr<FaultBackend> make_userfault_backend();
std::unique_ptr<FaultBackend> make_trap_backend();

enum class BackendChoice { automatic, userfault, trap };

// Resolves `automatic` to userfault when available, otherwise logs the
// downgrade and returns the trap backend.
std::unique_ptr<FaultBackend> make_backend(BackendChoice choice);

} // namespace ufo
