#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "ufo/chunk_store.hpp"
#include "ufo/errors.hpp"

#include "json.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

using namespace ufo;

namespace {

constexpr std::size_t mb = 1024 * 1024;

std::vector<std::byte> pattern_bytes(std::size_t len) {
    std::vector<std::byte> v(len);
    for (std::size_t i = 0; i < len; ++i) v[i] = static_cast<std::byte>(i % 251);
    return v;
}

std::string data_path(const char* name) {
    const char* dir = std::getenv("UFO_TEST_DATA");
    REQUIRE(dir != nullptr);
    return std::string(dir) + "/" + name;
}

ChunkRecord record(std::uint64_t object, std::size_t chunk, std::size_t bytes) {
    ChunkRecord r;
    r.object_id = object;
    r.chunk_index = chunk;
    r.byte_lo = chunk * bytes;
    r.length = bytes;
    return r;
}

std::string temp_dir() {
    const char* t = std::getenv("TMPDIR");
    return t && *t ? t : "/tmp";
}

} // namespace

TEST_CASE("content digests match the published reference outputs") {
    std::ifstream in(data_path("blake3_test_vectors.json"));
    REQUIRE(in.good());
    nlohmann::json doc = nlohmann::json::parse(in);

    int checked = 0;
    for (const auto& c : doc["cases"]) {
        std::size_t len = c["input_len"].get<std::size_t>();
        std::string expected = c["hash"].get<std::string>().substr(0, 64);
        std::vector<std::byte> input = pattern_bytes(len);
        CHECK(hash_window(input).hex() == expected);
        ++checked;
    }
    CHECK(checked == 35);
}

TEST_CASE("digests distinguish single-bit differences") {
    std::vector<std::byte> a(4096, std::byte{0});
    std::vector<std::byte> b = a;
    b[2049] = std::byte{1};
    CHECK(hash_window(a) == hash_window(a));
    CHECK_FALSE(hash_window(a) == hash_window(b));
    CHECK(hash_window(a).hex().size() == 64);
}

TEST_CASE("ledger keeps first-in-first-out order") {
    ResidencyLedger ledger;
    CHECK(ledger.empty());

    for (std::size_t i = 0; i < 5; ++i) ledger.note_materialized(record(1, i, mb));
    CHECK(ledger.size() == 5);
    CHECK(ledger.resident_bytes() == 5 * mb);
    CHECK(ledger.head().chunk_index == 0);

    ChunkRecord out = ledger.pop_head();
    CHECK(out.chunk_index == 0);
    CHECK(ledger.resident_bytes() == 4 * mb);
    CHECK(ledger.head().chunk_index == 1);
}

TEST_CASE("a chunk cannot be queued twice") {
    ResidencyLedger ledger;
    ledger.note_materialized(record(7, 3, mb));
    CHECK_THROWS_AS(ledger.note_materialized(record(7, 3, mb)), StateError);
    // ...but it can come back after leaving the queue
    ledger.pop_head();
    ledger.note_materialized(record(7, 3, mb));
    CHECK(ledger.size() == 1);
}

TEST_CASE("erasing an object tombstones its entries without disturbing the rest") {
    ResidencyLedger ledger;
    ledger.note_materialized(record(1, 0, mb));
    ledger.note_materialized(record(2, 0, mb));
    ledger.note_materialized(record(1, 1, mb));
    ledger.note_materialized(record(2, 1, mb));

    std::size_t dropped = ledger.erase_object(1);
    CHECK(dropped == 2 * mb);
    CHECK(ledger.size() == 2);
    CHECK(ledger.resident_bytes() == 2 * mb);

    CHECK(ledger.pop_head().object_id == 2);
    CHECK(ledger.pop_head().chunk_index == 1);
    CHECK(ledger.empty());
}

TEST_CASE("the ring grows past its initial capacity without losing order") {
    ResidencyLedger ledger;
    for (std::size_t i = 0; i < 1000; ++i) {
        ledger.note_materialized(record(i % 3, i, 4096));
        if (i % 7 == 0) ledger.pop_head(); // churn so head wraps around
    }
    auto snap = ledger.snapshot();
    CHECK(snap.size() == ledger.size());
    for (std::size_t i = 1; i < snap.size(); ++i)
        CHECK(snap[i - 1].chunk_index < snap[i].chunk_index);
}

TEST_CASE("collection drains the oldest chunks until the low mark") {
    ResidencyLedger ledger;
    for (std::size_t i = 0; i < 5; ++i) ledger.note_materialized(record(1, i, mb));

    WaterMarks marks{4 * mb, 2 * mb};
    std::vector<std::size_t> order;
    auto evicted = maybe_collect(ledger, marks, [&](const ChunkRecord& r) {
        order.push_back(r.chunk_index);
    });

    CHECK(evicted.size() == 3); // 5 MiB resident, down to 2 MiB
    CHECK(order == std::vector<std::size_t>{0, 1, 2});
    CHECK(ledger.resident_bytes() == 2 * mb);
    CHECK(ledger.collections() == 1);
    CHECK(ledger.evicted_chunks() == 3);
    CHECK(ledger.max_collection_end_bytes() == 2 * mb);

    // Below the high mark nothing happens.
    auto again = maybe_collect(ledger, marks, [&](const ChunkRecord&) { FAIL("no victim expected"); });
    CHECK(again.empty());
    CHECK(ledger.collections() == 1);
}

TEST_CASE("collection with oversized chunks stops when the ledger empties") {
    ResidencyLedger ledger;
    ledger.note_materialized(record(1, 0, 10 * mb));
    WaterMarks marks{4 * mb, 2 * mb};
    auto evicted = maybe_collect(ledger, marks, [](const ChunkRecord&) {});
    CHECK(evicted.size() == 1);
    CHECK(ledger.empty());
    CHECK(ledger.resident_bytes() == 0);
}

TEST_CASE("peak resident bytes track the high-water usage") {
    ResidencyLedger ledger;
    ledger.note_materialized(record(1, 0, 3 * mb));
    ledger.note_materialized(record(1, 1, 2 * mb));
    ledger.pop_head();
    ledger.note_materialized(record(1, 2, mb));
    CHECK(ledger.peak_resident_bytes() == 5 * mb);
    CHECK(ledger.resident_bytes() == 3 * mb);
}

TEST_CASE("water marks must be ordered") {
    CHECK_THROWS_AS(validate(WaterMarks{mb, mb}), ConfigError);
    CHECK_THROWS_AS(validate(WaterMarks{mb, 2 * mb}), ConfigError);
    CHECK_THROWS_AS(validate(WaterMarks{0, 0}), ConfigError);
    CHECK_NOTHROW(validate(WaterMarks{2 * mb, mb}));
}

TEST_CASE("cache slots round-trip and never bleed into each other") {
    ChunkCache cache(temp_dir(), 8);
    CHECK(cache.file_bytes() == 0);
    CHECK_FALSE(cache.present(2));
    CHECK_FALSE(cache.read(2, 2 * 4096, 4096).has_value());

    std::mt19937_64 rng(11);
    std::vector<std::byte> two(4096), five(4096);
    for (auto& b : two) b = static_cast<std::byte>(rng());
    for (auto& b : five) b = static_cast<std::byte>(rng());

    cache.write_back(2, 2 * 4096, two);
    cache.write_back(5, 5 * 4096, five);
    CHECK(cache.present(2));
    CHECK(cache.present(5));
    CHECK_FALSE(cache.present(3));
    CHECK(cache.write_count() == 2);
    CHECK(cache.file_bytes() > 0);

    auto got_two = cache.read(2, 2 * 4096, 4096);
    auto got_five = cache.read(5, 5 * 4096, 4096);
    REQUIRE(got_two.has_value());
    REQUIRE(got_five.has_value());
    CHECK(*got_two == two);
    CHECK(*got_five == five);

    // Rewrites replace the slot contents.
    cache.write_back(2, 2 * 4096, five);
    CHECK(*cache.read(2, 2 * 4096, 4096) == five);
}

TEST_CASE("a clean chunk is dropped without touching the cache") {
    ChunkCache cache(temp_dir(), 4);
    auto window = pattern_bytes(8192);

    ChunkRecord rec = record(1, 0, 8192);
    rec.digest = hash_window(window);

    int reclaims = 0;
    DematResult res = dematerialize(&cache, rec, window, false, [&] { ++reclaims; });
    CHECK(res == DematResult::kept_clean);
    CHECK(reclaims == 1);
    CHECK(cache.write_count() == 0);
    CHECK(cache.file_bytes() == 0);
}

TEST_CASE("a modified chunk is written back before its memory goes away") {
    ChunkCache cache(temp_dir(), 4);
    auto window = pattern_bytes(8192);

    ChunkRecord rec = record(1, 1, 8192);
    rec.byte_lo = 8192;
    rec.digest = hash_window(window);

    window[100] = std::byte{0xEE}; // the application wrote to the live pages
    int reclaims = 0;
    DematResult res = dematerialize(&cache, rec, window, false, [&] { ++reclaims; });
    CHECK(res == DematResult::wrote_back);
    CHECK(reclaims == 1);
    CHECK(cache.present(1));

    auto cached = cache.read(1, 8192, 8192);
    REQUIRE(cached.has_value());
    CHECK(*cached == window);
}

TEST_CASE("read-only objects skip both hashing and write-back") {
    auto window = pattern_bytes(4096);
    ChunkRecord rec = record(1, 0, 4096);
    // digest deliberately left unset: it is never computed for read-only data

    int reclaims = 0;
    DematResult res = dematerialize(nullptr, rec, window, true, [&] { ++reclaims; });
    CHECK(res == DematResult::skipped_read_only);
    CHECK(reclaims == 1);
}

TEST_CASE("a dirty chunk without a cache is a logic error") {
    auto window = pattern_bytes(4096);
    ChunkRecord rec = record(1, 0, 4096);
    rec.digest = hash_window(window);
    window[0] = std::byte{1};
    CHECK_THROWS_AS(dematerialize(nullptr, rec, window, false, [] {}), StateError);
}
