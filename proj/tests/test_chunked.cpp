#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ufo/backends.hpp"
#include "ufo/chunked.hpp"
#include "ufo/core.hpp"

#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

using namespace ufo;

namespace {

CoreParams small_params() {
    CoreParams p;
    p.high_water = 8u << 20;
    p.low_water = 4u << 20;
    p.chunk_size = 1u << 20;
    p.backend = "trap";
    return p;
}

template <class T>
T rd(Core& core, const UfoHandle& h, std::uint64_t ix) {
    T v{};
    core.read(h, ix, &v);
    return v;
}

} // namespace

TEST_CASE("chunk plans tile the index space exactly") {
    SUBCASE("empty") { CHECK(make_chunk_plan(0, 100).empty()); }
    SUBCASE("single short range") {
        auto plan = make_chunk_plan(5, 100);
        REQUIRE(plan.size() == 1);
        CHECK(plan[0].lo == 0);
        CHECK(plan[0].hi == 5);
    }
    SUBCASE("uneven tail") {
        auto plan = make_chunk_plan(25, 10);
        REQUIRE(plan.size() == 3);
        std::uint64_t at = 0;
        for (const auto& r : plan) {
            CHECK(r.lo == at); // contiguous, ascending
            CHECK(r.hi > r.lo);
            CHECK(r.hi - r.lo <= 10);
            at = r.hi;
        }
        CHECK(at == 25);
    }
    SUBCASE("zero max is rejected") {
        CHECK_THROWS_AS(make_chunk_plan(10, 0), ConfigError);
    }
}

TEST_CASE("map produces the same values an eager loop would") {
    Core core(small_params());
    auto xs = core.create(seq_config({1, 10, 1}));

    SUBCASE("identity") {
        auto ys = map_into_ufo<std::int64_t>(core, xs, [](std::int64_t v) { return v; });
        for (std::uint64_t i = 0; i < 10; ++i)
            CHECK(rd<std::int64_t>(core, ys, i) == static_cast<std::int64_t>(i + 1));
    }
    SUBCASE("binary op over two objects") {
        auto c = core.create(fill_config(std::int64_t{100}, 10));
        auto ys = map_into_ufo<std::int64_t>(
            core, {xs, c}, [](std::span<const std::int64_t> row) { return row[0] + row[1]; });
        std::vector<std::int64_t> got(10), want(10);
        core.read_range(ys, 0, 10, got.data());
        std::iota(want.begin(), want.end(), 101);
        CHECK(got == want);
    }
    SUBCASE("shape errors are caught at creation") {
        auto shorter = core.create(seq_config({1, 5, 1}));
        auto narrow = core.create(seq_config({1, 10, 1}, 4));
        auto f = [](std::span<const std::int64_t> row) { return row[0]; };
        CHECK_THROWS_AS(map_into_ufo<std::int64_t>(core, {xs, shorter}, f), ConfigError);
        CHECK_THROWS_AS(map_into_ufo<std::int64_t>(core, narrow,
                                                   [](std::int64_t v) { return v; }),
                        ConfigError);
        CHECK_THROWS_AS(map_into_ufo<std::int64_t>(core, std::vector<UfoHandle>{}, f),
                        ConfigError);
        CHECK_THROWS_AS(map_into_ufo<std::int32_t>(core, xs,
                                                   [](std::int32_t v) { return v; }),
                        ConfigError);
    }
    core.shutdown();
}

TEST_CASE("mapping is lazy: creation touches nothing, reads touch one chunk") {
    Core core(small_params());
    const std::uint64_t n = (16u << 20) / 8; // 16 MiB body, 16 chunks
    auto xs = core.create(seq_config({0, static_cast<std::int64_t>(n - 1), 1}));
    auto ys = map_into_ufo<std::int64_t>(core, xs, [](std::int64_t v) { return v * 2; });
    CHECK(core.stats().populate_calls == 0);

    CHECK(rd<std::int64_t>(core, ys, 5) == 10);
    const auto after_one = core.stats().populate_calls;
    CHECK(after_one >= 2);  // one derived chunk plus the input chunks it needed
    CHECK(after_one <= 4);  // but nowhere near all 32

    // a second element in the same chunk is free
    CHECK(rd<std::int64_t>(core, ys, 6) == 12);
    CHECK(core.stats().populate_calls == after_one);
    core.shutdown();
}

TEST_CASE("reduce folds every element while staying inside the water marks") {
    Core core(small_params());
    const std::uint64_t n = (32u << 20) / 8; // 32 MiB body, 4x the high water
    auto xs = core.create(seq_config({1, static_cast<std::int64_t>(n), 1}));

    auto sum = reduce_chunks<std::int64_t>(
        xs, std::int64_t{0}, [](std::int64_t acc, const std::int64_t& v) { return acc + v; });
    CHECK(sum == static_cast<std::int64_t>(n * (n + 1) / 2));

    const auto st = core.stats();
    CHECK(st.populate_calls == 32);
    CHECK(st.peak_resident_bytes <= *small_params().high_water + core.chunk_size());
    CHECK(st.collections > 0);
    core.shutdown();
}

TEST_CASE("reduce over an empty object returns the initial value") {
    Core core(small_params());
    UfoConfig cfg;
    cfg.element_size = 8;
    cfg.element_count = 0;
    auto xs = core.create(cfg);
    auto sum = reduce_chunks<std::int64_t>(xs, std::int64_t{41},
                                           [](std::int64_t a, const std::int64_t&) { return a; });
    CHECK(sum == 41);
    core.shutdown();
}

TEST_CASE("poison stops chunked execution instead of yielding garbage") {
    Core core(small_params());

    SUBCASE("an already-poisoned input is rejected at creation") {
        UfoConfig bad;
        bad.element_size = 8;
        bad.element_count = 100;
        bad.populate = [](const PopulateRequest&) { return 9; };
        auto xs = core.create(bad);
        CHECK_THROWS_AS(rd<std::int64_t>(core, xs, 0), PoisonedError);
        CHECK_THROWS_AS(map_into_ufo<std::int64_t>(core, xs,
                                                   [](std::int64_t v) { return v; }),
                        PoisonedError);
        CHECK_THROWS_AS(reduce_chunks<std::int64_t>(
                            xs, std::int64_t{0},
                            [](std::int64_t a, const std::int64_t&) { return a; }),
                        PoisonedError);
    }

    SUBCASE("an input that fails mid-scan poisons the derived object") {
        const std::uint64_t n = (4u << 20) / 8; // 4 chunks
        UfoConfig flaky;
        flaky.element_size = 8;
        flaky.element_count = n;
        flaky.populate = [](const PopulateRequest& req) {
            if (req.start_ix >= (1u << 20) / 8) return 5; // only chunk 0 works
            auto* out = reinterpret_cast<std::int64_t*>(req.target.data());
            for (std::uint64_t i = 0; i < req.count(); ++i)
                out[i] = static_cast<std::int64_t>(req.start_ix + i);
            return populate_ok;
        };
        auto xs = core.create(flaky);
        auto ys = map_into_ufo<std::int64_t>(core, xs, [](std::int64_t v) { return v + 1; });
        CHECK(rd<std::int64_t>(core, ys, 0) == 1); // chunk 0 works end to end
        CHECK_THROWS_AS(rd<std::int64_t>(core, ys, n - 1), PoisonedError);
        CHECK(core.object_stats(ys).status == ObjectStatus::poisoned);
        CHECK(core.object_stats(ys).poison_reason.find("poisoned") != std::string::npos);
    }
    core.shutdown();
}
