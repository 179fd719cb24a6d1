// Microbenchmark driver: create / sum / loop over seq- and file-backed
// vectors, in eager, managed read-write, and managed read-only modes.
// Timings land in an append-only CSV; result values go to stdout so runs
// can be cross-checked against each other.
#include <CLI11.hpp>

#include "ufo/backends.hpp"
#include "ufo/chunked.hpp"
#include "ufo/core.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

using namespace ufo;

namespace {

using Clock = std::chrono::steady_clock;

struct BenchOpts {
    std::string backend = "seq";
    std::string mode = "ufo";
    std::uint64_t size_bytes = 256ull << 20;
    std::uint64_t iters = 10;
    std::uint64_t chunk_size = 1ull << 20;
    std::uint64_t high_water = 32ull << 20;
    std::uint64_t low_water = 16ull << 20;
    std::string out = "results.csv";
    std::string path; // input file for the file backend
};

void add_bench_flags(CLI::App* cmd, BenchOpts& o) {
    cmd->add_option("--backend", o.backend)->check(CLI::IsMember({"seq", "file"}));
    cmd->add_option("--mode", o.mode)->check(CLI::IsMember({"eager", "ufo", "ufo_ro"}));
    cmd->add_option("--size-bytes", o.size_bytes);
    cmd->add_option("--iters", o.iters);
    cmd->add_option("--chunk-size", o.chunk_size);
    cmd->add_option("--high-water", o.high_water);
    cmd->add_option("--low-water", o.low_water);
    cmd->add_option("--out", o.out);
    cmd->add_option("--path", o.path, "input file (file backend)");
}

// header only when the file is new or empty, rows always appended
void record(const std::string& out, const char* op, const BenchOpts& o, std::uint64_t iteration,
            std::uint64_t nanos) {
    std::ifstream probe(out, std::ios::ate | std::ios::binary);
    const bool fresh = !probe.is_open() || probe.tellg() == std::streampos(0);
    probe.close();
    std::ofstream f(out, std::ios::app);
    if (!f) throw ConfigError("cannot open output file '" + out + "'");
    if (fresh) f << "benchmark,backend,mode,iteration,nanos\n";
    f << op << ',' << o.backend << ',' << o.mode << ',' << iteration << ',' << nanos << '\n';
}

std::uint64_t file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::ate | std::ios::binary);
    if (!f) throw ConfigError("input file '" + path + "' missing; run gen-file first");
    return static_cast<std::uint64_t>(f.tellg());
}

UfoConfig make_config(const BenchOpts& o, bool read_only) {
    if (o.backend == "seq") {
        const auto n = static_cast<std::int64_t>(o.size_bytes / 8);
        if (n < 1) throw ConfigError("--size-bytes too small for one element");
        auto cfg = seq_config({1, n, 1});
        cfg.read_only = read_only;
        return cfg;
    }
    const std::uint64_t n = o.size_bytes / 4;
    if (file_bytes(o.path) < n * 4)
        throw ConfigError("input file smaller than --size-bytes");
    return file_config({o.path, 4, n, 0}, read_only);
}

// eager comparators work on a plain heap vector
std::vector<std::byte> eager_materialize(const BenchOpts& o) {
    std::vector<std::byte> v(o.size_bytes);
    if (o.backend == "seq") {
        auto* vals = reinterpret_cast<std::int64_t*>(v.data());
        const std::uint64_t n = o.size_bytes / 8;
        for (std::uint64_t i = 0; i < n; ++i) vals[i] = static_cast<std::int64_t>(i + 1);
    } else {
        std::ifstream f(o.path, std::ios::binary);
        if (!f) throw ConfigError("input file '" + o.path + "' missing; run gen-file first");
        f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size()));
        if (f.gcount() != static_cast<std::streamsize>(v.size()))
            throw ConfigError("input file smaller than --size-bytes");
    }
    return v;
}

template <class T>
std::int64_t sum_raw(const std::byte* data, std::uint64_t count) {
    auto* vals = reinterpret_cast<const T*>(data);
    std::int64_t acc = 0;
    for (std::uint64_t i = 0; i < count; ++i) acc += static_cast<std::int64_t>(vals[i]);
    return acc;
}

template <class T>
std::uint64_t touch_raw(const std::byte* data, std::uint64_t count) {
    auto* vals = reinterpret_cast<const T*>(data);
    volatile T sink{};
    for (std::uint64_t i = 0; i < count; ++i) sink = vals[i];
    (void)sink;
    return count;
}

std::unique_ptr<Core> make_core(const BenchOpts& o) {
    CoreParams p;
    p.high_water = o.high_water;
    p.low_water = o.low_water;
    p.chunk_size = o.chunk_size;
    return std::make_unique<Core>(p);
}

// the harness refuses to emit timings if it cannot sum 1..10
void self_check(Core* core) {
    std::int64_t got = 0;
    if (core) {
        auto cfg = seq_config({1, 10, 1});
        cfg.read_only = true; // keep hash counters clean for read-only runs
        auto h = core->create(cfg);
        got = reduce_chunks<std::int64_t>(h, std::int64_t{0},
                                          [](std::int64_t a, const std::int64_t& v) { return a + v; });
        core->free(h);
    } else {
        for (int i = 1; i <= 10; ++i) got += i;
    }
    if (got != 55) throw StateError("self-check failed: sum(1..10) = " + std::to_string(got));
}

int run_bench(const char* op, const BenchOpts& o) {
    const bool eager = o.mode == "eager";
    const bool read_only = o.mode == "ufo_ro";
    const std::uint64_t elem = o.backend == "seq" ? 8 : 4;
    const std::uint64_t count = o.size_bytes / elem;

    std::unique_ptr<Core> core;
    if (!eager) core = make_core(o);
    self_check(core.get());

    std::int64_t sum_result = 0;
    for (std::uint64_t it = 0; it < o.iters; ++it) {
        std::uint64_t nanos = 0;
        if (std::strcmp(op, "create") == 0) {
            const auto t0 = Clock::now();
            if (eager) {
                auto v = eager_materialize(o);
                (void)v;
            } else {
                auto h = core->create(make_config(o, read_only));
                core->free(h);
            }
            nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
        } else {
            // sum and loop: setup outside the timed region, op inside
            std::vector<std::byte> v;
            UfoHandle h;
            if (eager)
                v = eager_materialize(o);
            else
                h = core->create(make_config(o, read_only));
            const std::byte* data = eager ? v.data() : static_cast<const std::byte*>(h.data());

            const auto t0 = Clock::now();
            if (std::strcmp(op, "sum") == 0) {
                if (eager)
                    sum_result = elem == 8 ? sum_raw<std::int64_t>(data, count)
                                           : sum_raw<std::int32_t>(data, count);
                else
                    sum_result =
                        elem == 8 ? reduce_chunks<std::int64_t>(h, std::int64_t{0},
                                                                [](std::int64_t a, const std::int64_t& x) {
                                                                    return a + x;
                                                                })
                                  : reduce_chunks<std::int32_t>(h, std::int64_t{0},
                                                                [](std::int64_t a, const std::int32_t& x) {
                                                                    return a + x;
                                                                });
            } else { // loop: per-element identity access, volatile so reads survive -O2
                if (eager)
                    elem == 8 ? touch_raw<std::int64_t>(data, count)
                              : touch_raw<std::int32_t>(data, count);
                else if (elem == 8)
                    reduce_chunks<std::int64_t>(h, std::int64_t{0},
                                                [](std::int64_t a, const std::int64_t& x) {
                                                    volatile std::int64_t sink = x;
                                                    (void)sink;
                                                    return a;
                                                });
                else
                    reduce_chunks<std::int32_t>(h, std::int64_t{0},
                                                [](std::int64_t a, const std::int32_t& x) {
                                                    volatile std::int32_t sink = x;
                                                    (void)sink;
                                                    return a;
                                                });
            }
            nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
            if (!eager) core->free(h);
        }
        record(o.out, op, o, it, nanos);
    }

    if (std::strcmp(op, "sum") == 0)
        std::printf("sum=%" PRId64 "\n", sum_result);
    else if (std::strcmp(op, "create") == 0)
        std::printf("created_bytes=%" PRIu64 "\n", o.size_bytes);
    else
        std::printf("touched=%" PRIu64 "\n", count);

    if (core) {
        const auto st = core->stats();
        std::fprintf(stderr, "[ufobench] populate_calls=%" PRIu64 " hash_calls=%" PRIu64
                             " peak_resident=%" PRIu64 "\n",
                     st.populate_calls, st.hash_calls, st.peak_resident_bytes);
        core->shutdown();
    }
    return 0;
}

int run_gen_file(const std::string& path, std::uint64_t count, const std::string& pattern,
                 std::uint64_t seed, std::int32_t value) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write '" + path + "'");
    std::mt19937_64 rng(seed);
    std::vector<std::int32_t> buf;
    buf.reserve(1 << 16);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::int32_t v;
        if (pattern == "index")
            v = static_cast<std::int32_t>(i);
        else if (pattern == "constant")
            v = value;
        else
            v = static_cast<std::int32_t>(rng());
        buf.push_back(v);
        if (buf.size() == buf.capacity() || i + 1 == count) {
            f.write(reinterpret_cast<const char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * 4));
            buf.clear();
        }
    }
    f.flush();
    if (!f) throw SystemError("short write to '" + path + "'", errno);
    std::printf("wrote=%" PRIu64 "\n", count * 4);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ufobench: create/sum/loop microbenchmarks over managed vectors"};
    app.require_subcommand(1);

    BenchOpts create_o, sum_o, loop_o;
    auto* create_cmd = app.add_subcommand("create", "allocate and free a vector");
    add_bench_flags(create_cmd, create_o);
    auto* sum_cmd = app.add_subcommand("sum", "sum all elements");
    add_bench_flags(sum_cmd, sum_o);
    auto* loop_cmd = app.add_subcommand("loop", "identity access to every element");
    add_bench_flags(loop_cmd, loop_o);

    std::string gen_path, gen_pattern = "index";
    std::uint64_t gen_count = 0, gen_seed = 42;
    std::int32_t gen_value = 5;
    auto* gen_cmd = app.add_subcommand("gen-file", "write a little-endian int32 input file");
    gen_cmd->add_option("--path", gen_path)->required();
    gen_cmd->add_option("--count", gen_count)->required();
    gen_cmd->add_option("--pattern", gen_pattern)
        ->check(CLI::IsMember({"index", "constant", "random"}));
    gen_cmd->add_option("--seed", gen_seed);
    gen_cmd->add_option("--value", gen_value, "cell value for the constant pattern");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen_cmd->parsed()) return run_gen_file(gen_path, gen_count, gen_pattern, gen_seed, gen_value);
        if (create_cmd->parsed()) return run_bench("create", create_o);
        if (sum_cmd->parsed()) return run_bench("sum", sum_o);
        return run_bench("loop", loop_o);
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "ufobench: %s\n", ex.what());
        return 1;
    }
}
