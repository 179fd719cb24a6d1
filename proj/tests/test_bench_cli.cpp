// Drives the ufobench binary (path in UFOBENCH_BIN) as a subprocess.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct RunResult {
    int exit_status = -1;
    std::string out;
};

std::string bench_bin() {
    const char* env = std::getenv("UFOBENCH_BIN");
    return env ? env : "/tmp/ufobench";
}

RunResult run(const std::string& args, bool keep_stderr = false) {
    const std::string cmd = bench_bin() + " " + args + (keep_stderr ? " 2>&1" : " 2>/dev/null");
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    RunResult r;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
    const int status = pclose(p);
    r.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::int64_t parse_sum(const std::string& out) {
    const auto at = out.find("sum=");
    REQUIRE(at != std::string::npos);
    return std::strtoll(out.c_str() + at + 4, nullptr, 10);
}

struct TempDir {
    std::string path;
    TempDir() {
        char name[] = "/tmp/ufobench-test-XXXXXX";
        REQUIRE(mkdtemp(name) != nullptr);
        path = name;
    }
    ~TempDir() {
        if (std::system(("rm -rf " + path).c_str()) != 0) perror("rm -rf");
    }
};

} // namespace

TEST_CASE("gen-file writes deterministic little-endian int32 patterns") {
    TempDir dir;
    const std::string p = dir.path + "/f.bin";

    auto r = run("gen-file --path " + p + " --count 8 --pattern index");
    CHECK(r.exit_status == 0);
    auto bytes = slurp(p);
    REQUIRE(bytes.size() == 32);
    for (std::int32_t i = 0; i < 8; ++i) {
        std::int32_t v;
        std::memcpy(&v, bytes.data() + i * 4, 4);
        CHECK(v == i);
    }

    run("gen-file --path " + p + " --count 8 --pattern constant --value 5");
    bytes = slurp(p);
    for (int i = 0; i < 8; ++i) {
        std::int32_t v;
        std::memcpy(&v, bytes.data() + i * 4, 4);
        CHECK(v == 5);
    }

    run("gen-file --path " + p + " --count 100 --pattern random --seed 9");
    const auto first = slurp(p);
    run("gen-file --path " + p + " --count 100 --pattern random --seed 9");
    CHECK(slurp(p) == first);
    run("gen-file --path " + p + " --count 100 --pattern random --seed 10");
    CHECK(slurp(p) != first);
}

TEST_CASE("eager and managed modes agree on the sum") {
    TempDir dir;
    const std::string in = dir.path + "/in.bin";
    const std::string csv = dir.path + "/r.csv";
    const std::string marks = " --high-water 8388608 --low-water 4194304 --chunk-size 1048576";
    REQUIRE(run("gen-file --path " + in + " --count 4194304 --pattern random --seed 3").exit_status == 0);

    auto eager = run("sum --backend file --mode eager --size-bytes 16777216 --iters 1 --path " +
                     in + " --out " + csv);
    auto managed = run("sum --backend file --mode ufo --size-bytes 16777216 --iters 1 --path " +
                       in + " --out " + csv + marks);
    auto readonly = run("sum --backend file --mode ufo_ro --size-bytes 16777216 --iters 1 --path " +
                        in + " --out " + csv + marks, true);
    REQUIRE(eager.exit_status == 0);
    REQUIRE(managed.exit_status == 0);
    REQUIRE(readonly.exit_status == 0);
    CHECK(parse_sum(eager.out) == parse_sum(managed.out));
    CHECK(parse_sum(eager.out) == parse_sum(readonly.out));
    // read-only runs never hash
    CHECK(readonly.out.find("hash_calls=0") != std::string::npos);

    auto seq_sum = run("sum --backend seq --mode ufo --size-bytes 800 --iters 1 --out " + csv + marks);
    CHECK(parse_sum(seq_sum.out) == 100 * 101 / 2); // 1..100
}

TEST_CASE("timing rows append to one header with fixed non-timing columns") {
    TempDir dir;
    const std::string csv = dir.path + "/r.csv";
    const std::string base = "sum --backend seq --mode ufo --size-bytes 800 --iters 2 --out " + csv +
                             " --high-water 8388608 --low-water 4194304";
    REQUIRE(run(base).exit_status == 0);
    REQUIRE(run(base).exit_status == 0);

    std::ifstream f(csv);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(f, line)) lines.push_back(line);
    REQUIRE(lines.size() == 5); // one header + 2 runs x 2 iters
    CHECK(lines[0] == "benchmark,backend,mode,iteration,nanos");
    for (int i = 1; i <= 4; ++i) {
        const std::string want = "sum,seq,ufo," + std::to_string((i - 1) % 2) + ",";
        CHECK(lines[i].substr(0, want.size()) == want);
        CHECK(std::strtoull(lines[i].c_str() + want.size(), nullptr, 10) > 0);
    }
}

TEST_CASE("managed creation is far cheaper than eager materialization") {
    TempDir dir;
    const std::string csv = dir.path + "/r.csv";
    const std::string size = " --size-bytes 67108864 --iters 3 --out " + csv;
    REQUIRE(run("create --backend seq --mode ufo" + size).exit_status == 0);
    REQUIRE(run("create --backend seq --mode eager" + size).exit_status == 0);

    std::ifstream f(csv);
    std::string line;
    std::getline(f, line); // header
    std::uint64_t ufo_min = ~0ull, eager_min = ~0ull;
    while (std::getline(f, line)) {
        const auto last = line.rfind(',');
        const std::uint64_t nanos = std::strtoull(line.c_str() + last + 1, nullptr, 10);
        auto& slot = line.find(",ufo,") != std::string::npos ? ufo_min : eager_min;
        slot = std::min(slot, nanos);
    }
    CHECK(ufo_min < eager_min / 5); // 64 MiB of memset vs an mmap reservation
}

TEST_CASE("bad invocations fail loudly") {
    CHECK(run("sum --backend file --mode ufo --size-bytes 1024 --path /nonexistent/x.bin").exit_status == 1);
    CHECK(run("sum --no-such-flag").exit_status != 0);
    CHECK(run("dance").exit_status != 0);
    CHECK(run("").exit_status != 0);
}

TEST_CASE("loop touches every element lazily") {
    TempDir dir;
    const std::string csv = dir.path + "/r.csv";
    auto r = run("loop --backend seq --mode ufo --size-bytes 8388608 --iters 1 --out " + csv +
                 " --high-water 8388608 --low-water 4194304 --chunk-size 1048576", true);
    REQUIRE(r.exit_status == 0);
    CHECK(r.out.find("touched=1048576") != std::string::npos);
    // 8 MiB body / 1 MiB chunks: every chunk populated exactly once (+1 self-check)
    CHECK(r.out.find("populate_calls=9") != std::string::npos);
}
