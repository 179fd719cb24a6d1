#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ufo/errors.hpp"
#include "ufo/layout.hpp"

#include <cstdint>
#include <random>

using namespace ufo;

namespace {

constexpr std::size_t kb = 1024;
constexpr std::size_t mb = 1024 * 1024;

UfoConfig config(std::uint64_t header, std::uint64_t elem_size, std::uint64_t count,
                 std::uint64_t chunk) {
    UfoConfig c;
    c.header_size = header;
    c.element_size = elem_size;
    c.element_count = count;
    c.chunk_size = chunk;
    return c;
}

// Checks every structural invariant of a layout against first principles:
// chunks tile the reservation exactly, the header occupies whole leading
// chunks, and element ownership matches plain byte-interval intersection.
void check_layout(const UfoLayout& lo) {
    const std::uint64_t chunks = lo.chunk_count();
    std::uint64_t expect_lo = 0;
    for (std::uint64_t i = 0; i < chunks; ++i) {
        ChunkExtent c = chunk_at(lo, i);
        REQUIRE(c.chunk_index == i);
        REQUIRE(c.byte_lo == expect_lo);
        REQUIRE(c.byte_hi > c.byte_lo);
        REQUIRE(c.byte_hi - c.byte_lo <= lo.chunk_size);
        if (i + 1 < chunks) REQUIRE(c.byte_hi - c.byte_lo == lo.chunk_size);
        expect_lo = c.byte_hi;

        REQUIRE(c.header == (c.byte_lo < lo.body_start));
        if (c.header) {
            REQUIRE(c.elem_lo == 0);
            REQUIRE(c.elem_hi == 0);
        } else {
            // Ownership oracle: element i belongs to this chunk exactly when
            // its byte span intersects the chunk's byte span. Checking the
            // elements around each claimed edge covers every way the
            // boundaries can be drawn; the interior is trivially owned.
            REQUIRE(c.byte_lo == lo.body_start + (i - lo.header_chunks()) * lo.chunk_size);
            auto check_element = [&](std::uint64_t e) {
                if (e >= lo.element_count) return;
                std::uint64_t span_lo = lo.body_start + e * lo.element_size;
                std::uint64_t span_hi = span_lo + lo.element_size;
                bool intersects = span_lo < c.byte_hi && span_hi > c.byte_lo;
                bool owned = e >= c.elem_lo && e < c.elem_hi;
                REQUIRE(owned == intersects);
            };
            for (std::uint64_t d = 0; d < 4; ++d) {
                check_element(c.elem_lo >= d ? c.elem_lo - d : 0);
                check_element(c.elem_lo + d);
                check_element(c.elem_hi >= d ? c.elem_hi - d : 0);
                check_element(c.elem_hi + d);
            }
        }
    }
    if (chunks > 0) REQUIRE(expect_lo == lo.total_reserved);
    REQUIRE(lo.total_reserved % lo.page_size == 0);

    std::uint64_t header_seen = 0;
    for (std::uint64_t i = 0; i < chunks; ++i)
        if (chunk_at(lo, i).header) ++header_seen;
    REQUIRE(header_seen == lo.header_chunks());
}

} // namespace

TEST_CASE("100-byte header before a million int32s") {
    UfoLayout lo = compute_layout(config(100, 4, 1u << 20, mb), 4096);

    CHECK(lo.body_start == mb);
    CHECK(lo.front_pad == 1048476);  // header sits at the tail of chunk 0
    CHECK(lo.user_offset == 1048476);
    CHECK(lo.total_reserved == 5 * mb);
    CHECK(lo.chunk_count() == 5);
    CHECK(lo.header_chunks() == 1);

    ChunkExtent first_body = chunk_at(lo, 1);
    CHECK(first_body.byte_lo == mb);
    CHECK(first_body.elem_lo == 0);
    CHECK(first_body.elem_hi == 262144);
    CHECK_FALSE(first_body.header);

    check_layout(lo);
}

TEST_CASE("elements that straddle a chunk boundary belong to both chunks") {
    // 6-byte elements in one-page chunks: 4096 is not a multiple of 6.
    UfoLayout lo = compute_layout(config(0, 6, 10000, 4096), 4096);
    CHECK(lo.body_start == 0);
    CHECK(lo.front_pad == 0);

    ChunkExtent c1 = chunk_at(lo, 1);
    CHECK(c1.elem_lo == 682);  // element 682 starts at byte 4092, inside chunk 0
    CHECK(c1.elem_hi == 1366); // element 1365 ends at byte 8196, inside chunk 2

    ChunkExtent c0 = chunk_at(lo, 0);
    CHECK(c0.elem_hi == 683);  // straddler owned by both sides of the boundary
    check_layout(lo);
}

TEST_CASE("headerless layouts start the body at offset zero") {
    UfoLayout lo = compute_layout(config(0, 8, 1000, mb), 4096);
    CHECK(lo.body_start == 0);
    CHECK(lo.user_offset == 0);
    CHECK(lo.header_chunks() == 0);
    CHECK(lo.total_reserved == 8192); // 8000 bytes rounded up to pages
    check_layout(lo);
}

TEST_CASE("a header larger than one chunk occupies several whole chunks") {
    UfoLayout lo = compute_layout(config(3 * mb + 17, 4, 100, mb), 4096);
    CHECK(lo.body_start == 4 * mb);
    CHECK(lo.header_chunks() == 4);
    CHECK(lo.front_pad == 4 * mb - (3 * mb + 17));
    check_layout(lo);
}

TEST_CASE("empty objects reserve nothing") {
    UfoLayout lo = compute_layout(config(0, 4, 0, mb), 4096);
    CHECK(lo.total_reserved == 0);
    CHECK(lo.chunk_count() == 0);
}

TEST_CASE("a header with no elements still needs its chunks") {
    UfoLayout lo = compute_layout(config(5, 4, 0, mb), 4096);
    CHECK(lo.body_start == mb);
    CHECK(lo.total_reserved == mb);
    CHECK(lo.chunk_count() == 1);
    check_layout(lo);
}

TEST_CASE("elements wider than a chunk") {
    UfoLayout lo = compute_layout(config(0, 3 * 4096, 16, 4096), 4096);
    CHECK(lo.elements_per_chunk == 1);
    check_layout(lo);

    // Chunk 1 lies wholly inside element 0, which spans chunks 0..2.
    ChunkExtent c1 = chunk_at(lo, 1);
    CHECK(c1.elem_lo == 0);
    CHECK(c1.elem_hi == 1);
}

TEST_CASE("offset and index conversions agree") {
    UfoLayout lo = compute_layout(config(100, 12, 5000, 16 * kb), 4096);
    for (std::uint64_t i : {0ull, 1ull, 340ull, 341ull, 4999ull}) {
        std::uint64_t off = index_to_offset(lo, i);
        CHECK(off == lo.body_start + i * 12);
        CHECK(offset_to_index(lo, off) == i);
        CHECK(offset_to_index(lo, off + 11) == i);
    }
    CHECK_THROWS_AS(index_to_offset(lo, 5000), RangeError);
    CHECK_THROWS_AS(offset_to_index(lo, lo.body_start + 5000 * 12), RangeError);
    CHECK_THROWS_AS((void)offset_to_index(lo, 0), RangeError); // header byte
}

TEST_CASE("chunk lookup by offset") {
    UfoLayout lo = compute_layout(config(9, 16, 100000, 64 * kb), 4096);
    for (std::uint64_t off : {std::size_t{0}, std::size_t{65535}, std::size_t{65536},
                              lo.total_reserved - 1}) {
        ChunkExtent c = chunk_of_offset(lo, off);
        CHECK(c.byte_lo <= off);
        CHECK(off < c.byte_hi);
    }
    CHECK_THROWS_AS(chunk_of_offset(lo, lo.total_reserved), RangeError);
    CHECK_THROWS_AS(chunk_at(lo, lo.chunk_count()), RangeError);
}

TEST_CASE("bad configurations are rejected") {
    CHECK_THROWS_AS(compute_layout(config(0, 0, 10, mb), 4096), ConfigError);
    CHECK_THROWS_AS(compute_layout(config(0, 4, 10, 4000), 4096), ConfigError); // not page multiple
    CHECK_THROWS_AS(compute_layout(config(0, 4, 10, 0), 0), ConfigError);       // page size zero
    CHECK_THROWS_AS(compute_layout(config(0, 1u << 30, 1ull << 40, mb), 4096),
                    ConfigError); // n*e overflows
}

TEST_CASE("randomized layouts hold the structural invariants") {
    std::mt19937_64 rng(0x5eedu);
    std::uniform_int_distribution<std::uint64_t> header_d(0, 3 * mb);
    std::uniform_int_distribution<std::uint64_t> elem_d(1, 64);
    std::uniform_int_distribution<std::uint64_t> count_d(0, 500000);
    std::uniform_int_distribution<std::uint64_t> chunk_pages_d(1, 64);

    for (int i = 0; i < 200; ++i) {
        std::uint64_t chunk = chunk_pages_d(rng) * 4096;
        UfoLayout lo = compute_layout(
            config(header_d(rng), elem_d(rng), count_d(rng), chunk), 4096);
        check_layout(lo);
    }
}
