#pragma once

#include <cstddef>
#include <cstdint>

#include "ufo/populate.hpp"

namespace ufo {

// Geometry and behaviour of one object, as supplied by the host.
struct UfoConfig {
    std::size_t header_size = 0;   // host-runtime header bytes, opaque to the core
    std::size_t element_size = 0;  // bytes per element, >= 1
    std::size_t element_count = 0;
    std::size_t chunk_size = 0;    // 0 = core default; must be a positive page multiple
    bool read_only = false;        // skip hashing and write-back; writes revert on eviction
    PopulateFn populate;           // generates body contents; required when element_count > 0
    void* user_data = nullptr;     // passed through to populate verbatim
};

// Derived layout of one reservation.
//
// The header occupies the tail of the leading chunk(s): the body begins at the
// first chunk boundary at or after header_size, so element 0 always starts
// exactly on a chunk boundary and [0, user_offset) is dead front padding.
// The reservation is rear-padded to a whole page.
struct UfoLayout {
    std::size_t body_start = 0;         // first body byte; multiple of chunk_size
    std::size_t front_pad = 0;          // dead bytes ahead of the header
    std::size_t total_reserved = 0;     // page-aligned reservation length
    std::size_t user_offset = 0;        // header start within the reservation (== front_pad)
    std::size_t elements_per_chunk = 0; // how many whole elements one chunk holds, >= 1

    // carried through so offset math needs no second argument
    std::size_t element_size = 0;
    std::size_t element_count = 0;
    std::size_t chunk_size = 0;
    std::size_t page_size = 0;

    std::size_t body_bytes() const noexcept { return element_count * element_size; }
    std::size_t body_end() const noexcept { return body_start + body_bytes(); }
    // chunks tiling [0, total_reserved); the last one may be short
    std::size_t chunk_count() const noexcept {
        return chunk_size == 0 ? 0 : (total_reserved + chunk_size - 1) / chunk_size;
    }
    std::size_t header_chunks() const noexcept {
        return chunk_size == 0 ? 0 : body_start / chunk_size;
    }
};

// One materializable window of the tiling. chunk_index counts all chunks from
// the start of the reservation; body chunks additionally satisfy
// byte_lo == body_start + (chunk_index - header_chunks) * chunk_size.
// Windows are page-aligned and tile [0, total_reserved) without gaps.
// elem_lo/elem_hi cover every element whose bytes intersect the window, so
// elements straddling a chunk boundary are claimed by both neighbours.
// Header chunks carry elem_lo == elem_hi == 0.
struct ChunkExtent {
    std::size_t chunk_index = 0;
    std::size_t byte_lo = 0;
    std::size_t byte_hi = 0;
    std::size_t elem_lo = 0;
    std::size_t elem_hi = 0;
    bool header = false;

    std::size_t length() const noexcept { return byte_hi - byte_lo; }
};

// Computes the layout for a config. Throws ConfigError when element_size is
// zero, chunk_size is not a positive multiple of page_size, or the object
// does not fit in the address space.
UfoLayout compute_layout(const UfoConfig& config, std::size_t page_size);

// Returns the extent containing byte_offset. Throws RangeError when the
// offset lies outside [0, total_reserved).
ChunkExtent chunk_of_offset(const UfoLayout& layout, std::size_t byte_offset);

// Extent of the chunk with the given tiling index. Throws RangeError when the
// index is out of range.
ChunkExtent chunk_at(const UfoLayout& layout, std::size_t chunk_index);

// Byte offset of an element's first byte / element owning a body byte offset.
// index_to_offset throws RangeError for i >= element_count; offset_to_index
// throws RangeError for offsets outside [body_start, body_start + n*e).
std::size_t index_to_offset(const UfoLayout& layout, std::size_t element_index);
std::size_t offset_to_index(const UfoLayout& layout, std::size_t byte_offset);

} // namespace ufo
