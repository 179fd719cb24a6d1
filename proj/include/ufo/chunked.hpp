#pragma once

#include "ufo/core.hpp"

#include <memory>
#include <span>
#include <type_traits>
#include <vector>

namespace ufo {

// One planned slice of work: elements [lo, hi).
struct ChunkRange {
    std::uint64_t lo = 0;
    std::uint64_t hi = 0;
};

// Splits [0, n) into ordered, disjoint ranges of at most max_elements each.
inline std::vector<ChunkRange> make_chunk_plan(std::uint64_t n, std::uint64_t max_elements) {
    if (max_elements == 0) throw ConfigError("chunk plan needs a positive range size");
    std::vector<ChunkRange> plan;
    plan.reserve(static_cast<std::size_t>(n / max_elements + 1));
    for (std::uint64_t lo = 0; lo < n; lo += max_elements)
        plan.push_back({lo, std::min(n, lo + max_elements)});
    return plan;
}

// Lazily applies f element-wise across equally sized inputs, results landing
// in a new object. Nothing is computed (and no input populate runs) until the
// result is read. The result's populate pulls each input range through
// Core::read_range, the sanctioned in-populate access path, so inputs
// materialize through their own fault pipeline and stay subject to eviction.
//
// f is called per element with one value from each input, in input order:
// T out = f(std::span<const T> values).
template <typename T, typename F>
UfoHandle map_into_ufo(Core& core, const std::vector<UfoHandle>& inputs, F f,
                       std::size_t header_size = 0) {
    static_assert(std::is_trivially_copyable_v<T>);
    if (inputs.empty()) throw ConfigError("map needs at least one input");
    const std::uint64_t n = inputs.front().element_count();
    for (const UfoHandle& input : inputs) {
        if (!input.valid()) throw StateError("map over an invalid handle");
        if (input.status() == ObjectStatus::poisoned)
            throw PoisonedError("object is poisoned: " + input.poison_reason());
        if (input.element_count() != n) throw ConfigError("map inputs differ in length");
        if (input.element_size() != sizeof(T))
            throw ConfigError("input element size does not match the mapped type");
    }

    struct State {
        Core* core;
        std::vector<UfoHandle> inputs;
        F f;
    };
    auto state = std::make_shared<State>(State{&core, inputs, std::move(f)});

    UfoConfig cfg;
    cfg.header_size = header_size;
    cfg.element_size = sizeof(T);
    cfg.element_count = n;
    cfg.populate = [state](const PopulateRequest& req) -> int {
        const std::size_t count = static_cast<std::size_t>(req.count());
        std::vector<std::vector<T>> gathered(state->inputs.size());
        for (std::size_t k = 0; k < state->inputs.size(); ++k) {
            gathered[k].resize(count);
            state->core->read_range(state->inputs[k], req.start_ix, req.end_ix,
                                    gathered[k].data());
        }
        auto* out = reinterpret_cast<T*>(req.target.data());
        std::vector<T> row(state->inputs.size());
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t k = 0; k < row.size(); ++k) row[k] = gathered[k][i];
            out[i] = state->f(std::span<const T>(row.data(), row.size()));
        }
        return populate_ok;
    };
    return core.create(cfg);
}

// map_into_ufo for a single input and a plain unary function.
template <typename T, typename F>
UfoHandle map_into_ufo(Core& core, const UfoHandle& input, F f, std::size_t header_size = 0) {
    return map_into_ufo<T>(
        core, std::vector<UfoHandle>{input},
        [f = std::move(f)](std::span<const T> values) { return f(values.front()); },
        header_size);
}

// Folds acc = f(acc, element) over every element in ascending order, one
// planned range at a time, reading through the object's own memory so
// residency stays watermark-bounded no matter the object's size.
template <typename T, typename A, typename F>
A reduce_chunks(const UfoHandle& handle, A init, F f, std::uint64_t max_elements = 0) {
    static_assert(std::is_trivially_copyable_v<T>);
    if (!handle.valid()) throw StateError("reduce over an invalid handle");
    if (handle.element_size() != sizeof(T))
        throw ConfigError("element size does not match the reduced type");
    auto check_poison = [&handle] {
        if (handle.status() == ObjectStatus::poisoned)
            throw PoisonedError("object is poisoned: " + handle.poison_reason());
    };
    check_poison();
    if (max_elements == 0)
        max_elements = std::max<std::uint64_t>(1, handle.layout().elements_per_chunk);

    A acc = std::move(init);
    const T* body = handle.data_as<const T>();
    for (const ChunkRange& range : make_chunk_plan(handle.element_count(), max_elements)) {
        for (std::uint64_t i = range.lo; i < range.hi; ++i) acc = f(std::move(acc), body[i]);
        check_poison(); // a populate failure mid-scan produced zeros, not data
    }
    return acc;
}

} // namespace ufo
