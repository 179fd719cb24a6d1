#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

namespace ufo {

// One request to generate a contiguous run of elements. `target` is a plain
// writable buffer of exactly (end_ix - start_ix) * element_size bytes; it is
// only valid for the duration of the call.
struct PopulateRequest {
    std::uint64_t start_ix; // first element index, inclusive
    std::uint64_t end_ix;   // past-the-end element index
    void* user_data;        // opaque value carried from the object's config
    std::span<std::byte> target;

    std::uint64_t count() const noexcept { return end_ix - start_ix; }
};

// Population functions return 0 on success. Any other value marks the object
// poisoned (or aborts, depending on core configuration). They must be
// deterministic and idempotent: the same range always yields the same bytes,
// and overlapping requests agree on shared elements. They run on the fault
// service thread and must not touch unmaterialized framework memory.
using PopulateFn = std::function<int(const PopulateRequest&)>;

inline constexpr int populate_ok = 0;

// Status the framework substitutes when a population function trips the
// reentrancy guard by touching another object's unmaterialized memory.
// User functions should not return negative values.
inline constexpr int populate_nested_access = -2;

} // namespace ufo
