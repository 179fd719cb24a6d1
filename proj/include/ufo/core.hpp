#pragma once

#include "ufo/errors.hpp"
#include "ufo/fault_backend.hpp"
#include "ufo/layout.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

namespace ufo {

class Engine;

enum class ObjectStatus : int {
    live = 0,
    poisoned = 1, // a populate or cache failure was absorbed; contents untrusted
    freed = 2,
};

// Shared between the service thread and every handle copy. poison_reason is
// written exactly once, before the release-store that flips status to
// poisoned, so readers that see poisoned may read it without a lock.
struct ObjectShared {
    std::atomic<int> status{static_cast<int>(ObjectStatus::live)};
    std::string poison_reason;
};

struct CoreParams {
    std::optional<std::size_t> high_water;  // bytes; default 2 GiB
    std::optional<std::size_t> low_water;   // bytes; default 1 GiB
    std::optional<std::size_t> chunk_size;  // bytes, page multiple; default 1 MiB
    std::optional<std::string> backend;     // "userfault", "trap", or "auto"
    std::optional<std::string> temp_dir;    // where write-back cache files live
    bool abort_on_populate_failure = false; // abort() instead of poisoning
};

struct CoreStats {
    std::size_t resident_bytes = 0;
    std::size_t peak_resident_bytes = 0;
    std::uint64_t collections = 0;
    std::uint64_t evicted_chunks = 0;
    std::size_t max_collection_end_bytes = 0;
    std::uint64_t faults = 0;
    std::uint64_t populate_calls = 0;
    std::uint64_t hash_calls = 0;
    std::uint64_t write_backs = 0;
    std::uint64_t cache_loads = 0;
    std::uint64_t live_objects = 0;
};

struct ObjectStats {
    ObjectStatus status = ObjectStatus::live;
    std::string poison_reason;
    std::uint64_t faults = 0;
    std::uint64_t populate_calls = 0;
    std::uint64_t hash_calls = 0;
    std::uint64_t write_backs = 0;
    std::uint64_t cache_loads = 0;
    std::uint64_t evictions = 0;
    std::uint64_t materializations = 0;
    std::size_t resident_chunks = 0;
    std::size_t cache_file_bytes = 0;
};

// A live larger-than-memory object. Copyable; all copies refer to the same
// object. The body behaves like ordinary memory: index it, hand it to code
// that has never heard of this library, take pointers into it. The only
// contract is that populate callbacks must not touch any such memory
// directly (use Core::read_range there instead).
class UfoHandle {
public:
    UfoHandle() = default;

    bool valid() const noexcept {
        return engine_ != nullptr && shared_ &&
               shared_->status.load(std::memory_order_acquire) !=
                   static_cast<int>(ObjectStatus::freed);
    }
    std::uint64_t id() const noexcept { return id_; }

    // Start of the element body. For an empty object this is one past the
    // header and must not be dereferenced.
    void* data() const noexcept {
        return reinterpret_cast<void*>(base_ + layout_.body_start);
    }
    template <typename T>
    T* data_as() const noexcept {
        return static_cast<T*>(data());
    }
    // Start of the user header, or nullptr when there is none.
    void* header() const noexcept {
        return header_size_ == 0 ? nullptr
                                 : reinterpret_cast<void*>(base_ + layout_.user_offset);
    }

    std::size_t header_size() const noexcept { return header_size_; }
    std::size_t element_size() const noexcept { return element_size_; }
    std::uint64_t element_count() const noexcept { return element_count_; }
    std::size_t body_bytes() const noexcept {
        return static_cast<std::size_t>(element_count_) * element_size_;
    }
    const UfoLayout& layout() const noexcept { return layout_; }
    bool read_only() const noexcept { return read_only_; }

    ObjectStatus status() const noexcept {
        if (!shared_) return ObjectStatus::freed;
        return static_cast<ObjectStatus>(shared_->status.load(std::memory_order_acquire));
    }
    // Meaningful only once status() == poisoned.
    std::string poison_reason() const {
        return shared_ ? shared_->poison_reason : std::string{};
    }

private:
    friend class Core;
    Engine* engine_ = nullptr;
    std::uint64_t id_ = 0;
    std::uintptr_t base_ = 0;
    UfoLayout layout_{};
    std::shared_ptr<ObjectShared> shared_;
    std::size_t header_size_ = 0;
    std::size_t element_size_ = 0;
    std::uint64_t element_count_ = 0;
    bool read_only_ = false;
};

// Owns the service thread, the fault backend, the residency ledger, and all
// objects. At most one Core may be live in a process at a time; destroying
// (or shutting down) one makes room for the next.
//
// Configuration precedence per knob: explicit CoreParams field, then the
// environment (UFO_HIGH_WATER, UFO_LOW_WATER, UFO_CHUNK_SIZE, UFO_BACKEND,
// UFO_TMPDIR; sizes accept K/M/G binary suffixes), then the defaults above.
class Core {
public:
    explicit Core(const CoreParams& params = {});
    ~Core();

    Core(const Core&) = delete;
    Core& operator=(const Core&) = delete;

    UfoHandle create(const UfoConfig& config);
    void free(UfoHandle& handle);

    // Element access helpers. Semantically identical to a plain memcpy
    // against data(); they add bounds checks and poison detection.
    void read(const UfoHandle& handle, std::uint64_t index, void* out) const;
    // Returns false when the write cannot persist (read-only object): the
    // bytes land in memory but vanish on eviction.
    bool write(const UfoHandle& handle, std::uint64_t index, const void* bytes) const;

    // Copies elements [elem_lo, elem_hi) out through the service thread
    // without faulting. Safe to call from inside a populate callback; this
    // is how derived objects read their inputs.
    void read_range(const UfoHandle& handle, std::uint64_t elem_lo, std::uint64_t elem_hi,
                    void* out) const;

    // Forces every resident chunk through the eviction pipeline now.
    void evict_all();

    CoreStats stats() const;
    ObjectStats object_stats(const UfoHandle& handle) const;

    BackendKind backend_kind() const;
    std::size_t chunk_size() const;
    std::size_t high_water() const;
    std::size_t low_water() const;

    void shutdown(); // idempotent; afterwards every other call throws StateError

private:
    Engine& engine() const;
    std::unique_ptr<Engine> engine_;
};

// Parses "4096", "64K", "32M", "2G" (binary multiples) into bytes.
std::size_t parse_size(const std::string& text);

} // namespace ufo
