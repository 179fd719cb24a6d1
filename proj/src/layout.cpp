#include "ufo/layout.hpp"

#include <bit>
#include <limits>

#include "ufo/errors.hpp"

namespace ufo {

namespace {

std::size_t round_up(std::size_t value, std::size_t step) {
    std::size_t rem = value % step;
    if (rem == 0) return value;
    std::size_t up = value + (step - rem);
    if (up < value) throw ConfigError("layout size overflows the address space");
    return up;
}

} // namespace

UfoLayout compute_layout(const UfoConfig& config, std::size_t page_size) {
    if (page_size == 0 || !std::has_single_bit(page_size))
        throw ConfigError("page size must be a power of two");
    if (config.element_size == 0)
        throw ConfigError("element size must be at least one byte");
    if (config.chunk_size == 0 || config.chunk_size % page_size != 0)
        throw ConfigError("chunk size must be a positive multiple of the page size");

    const std::size_t e = config.element_size;
    const std::size_t n = config.element_count;
    const std::size_t c = config.chunk_size;

    if (n != 0 && e > std::numeric_limits<std::size_t>::max() / n)
        throw ConfigError("object body overflows the address space");

    UfoLayout layout;
    layout.element_size = e;
    layout.element_count = n;
    layout.chunk_size = c;
    layout.page_size = page_size;

    // No header means no header chunk at all.
    layout.body_start = config.header_size == 0 ? 0 : round_up(config.header_size, c);
    layout.user_offset = layout.body_start - config.header_size;
    layout.front_pad = layout.user_offset;

    std::size_t body_bytes = n * e;
    if (layout.body_start > std::numeric_limits<std::size_t>::max() - body_bytes)
        throw ConfigError("object body overflows the address space");
    layout.total_reserved = round_up(layout.body_start + body_bytes, page_size);

    layout.elements_per_chunk = c / e > 0 ? c / e : 1;
    return layout;
}

ChunkExtent chunk_of_offset(const UfoLayout& layout, std::size_t byte_offset) {
    if (byte_offset >= layout.total_reserved)
        throw RangeError("byte offset outside the reservation");
    return chunk_at(layout, byte_offset / layout.chunk_size);
}

ChunkExtent chunk_at(const UfoLayout& layout, std::size_t chunk_index) {
    if (chunk_index >= layout.chunk_count())
        throw RangeError("chunk index outside the reservation");

    ChunkExtent ext;
    ext.chunk_index = chunk_index;
    ext.byte_lo = chunk_index * layout.chunk_size;
    ext.byte_hi = std::min(ext.byte_lo + layout.chunk_size, layout.total_reserved);
    ext.header = ext.byte_lo < layout.body_start;

    if (ext.header) {
        ext.elem_lo = ext.elem_hi = 0;
        return ext;
    }

    const std::size_t b = layout.body_start;
    const std::size_t e = layout.element_size;
    ext.elem_lo = std::min(layout.element_count, (ext.byte_lo - b) / e);
    ext.elem_hi = std::min(layout.element_count, (ext.byte_hi - b + e - 1) / e);
    return ext;
}

std::size_t index_to_offset(const UfoLayout& layout, std::size_t element_index) {
    if (element_index >= layout.element_count)
        throw RangeError("element index out of range");
    return layout.body_start + element_index * layout.element_size;
}

std::size_t offset_to_index(const UfoLayout& layout, std::size_t byte_offset) {
    if (byte_offset < layout.body_start || byte_offset >= layout.body_end())
        throw RangeError("byte offset outside the body");
    return (byte_offset - layout.body_start) / layout.element_size;
}

} // namespace ufo
