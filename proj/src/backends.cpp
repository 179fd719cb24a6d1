#include "ufo/backends.hpp"

#include "log.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace ufo {

namespace {

// shared open file with pread access; closes with the last populate copy
struct FileSource {
    int fd = -1;
    explicit FileSource(const std::string& path) {
        fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd < 0) throw ConfigError("cannot open '" + path + "': " + std::strerror(errno));
    }
    ~FileSource() { ::close(fd); }
    FileSource(const FileSource&) = delete;
    FileSource& operator=(const FileSource&) = delete;

    std::uint64_t size() const {
        struct stat st{};
        if (::fstat(fd, &st) != 0) throw SystemError("fstat", errno);
        return static_cast<std::uint64_t>(st.st_size);
    }

    // whole-span pread; false on EOF short of the span or I/O error
    bool read_exact(std::uint64_t offset, std::span<std::byte> out) const {
        std::size_t done = 0;
        while (done < out.size()) {
            ssize_t r = ::pread(fd, out.data() + done, out.size() - done,
                                static_cast<off_t>(offset + done));
            if (r < 0) {
                if (errno == EINTR) continue;
                return false;
            }
            if (r == 0) return false;
            done += static_cast<std::size_t>(r);
        }
        return true;
    }
};

void encode_le(std::int64_t value, std::byte* out, std::size_t width) {
    auto bits = static_cast<std::uint64_t>(value);
    for (std::size_t i = 0; i < width; ++i) out[i] = std::byte(bits >> (8 * i));
}

} // namespace

std::uint64_t seq_length(const SeqSpec& spec) {
    if (spec.by == 0) throw ConfigError("sequence step must be nonzero");
    const __int128 diff = static_cast<__int128>(spec.to) - spec.from;
    if (diff == 0) return 1;
    if ((diff < 0) != (spec.by < 0)) return 0;
    return static_cast<std::uint64_t>(diff / spec.by) + 1;
}

std::int64_t seq_value(const SeqSpec& spec, std::uint64_t index) {
    // wraparound is defined behaviour: compute in unsigned
    const std::uint64_t term = static_cast<std::uint64_t>(spec.by) * index;
    return static_cast<std::int64_t>(static_cast<std::uint64_t>(spec.from) + term);
}

UfoConfig seq_config(const SeqSpec& spec, std::size_t element_size, std::size_t header_size) {
    if (element_size != 1 && element_size != 2 && element_size != 4 && element_size != 8)
        throw ConfigError("sequence element size must be 1, 2, 4, or 8");
    const std::uint64_t n = seq_length(spec); // validates by != 0

    UfoConfig cfg;
    cfg.header_size = header_size;
    cfg.element_size = element_size;
    cfg.element_count = n;
    cfg.populate = [spec, element_size](const PopulateRequest& req) {
        std::byte* out = req.target.data();
        for (std::uint64_t i = req.start_ix; i < req.end_ix; ++i, out += element_size)
            encode_le(seq_value(spec, i), out, element_size);
        return populate_ok;
    };
    return cfg;
}

std::uint64_t file_element_count(const std::string& path, std::size_t element_size,
                                 std::uint64_t base_offset) {
    if (element_size == 0) throw ConfigError("element size must be positive");
    FileSource src(path);
    const std::uint64_t size = src.size();
    return size <= base_offset ? 0 : (size - base_offset) / element_size;
}

UfoConfig file_config(const FileSpec& spec, bool read_only, std::size_t header_size) {
    if (spec.element_size == 0) throw ConfigError("element size must be positive");
    auto src = std::make_shared<FileSource>(spec.path);

    const std::uint64_t available =
        src->size() <= spec.base_offset ? 0
                                        : (src->size() - spec.base_offset) / spec.element_size;
    std::uint64_t count = spec.element_count;
    if (count == 0)
        count = available;
    else if (count > available)
        throw ConfigError("'" + spec.path + "' holds " + std::to_string(available) +
                          " elements, config wants " + std::to_string(count));

    UfoConfig cfg;
    cfg.header_size = header_size;
    cfg.element_size = spec.element_size;
    cfg.element_count = count;
    cfg.read_only = read_only;
    cfg.populate = [src, base = spec.base_offset, e = spec.element_size](const PopulateRequest& req) {
        const std::uint64_t lo = base + req.start_ix * e;
        if (!src->read_exact(lo, req.target)) {
            log_warn("file populate: short read at offset %llu", (unsigned long long)lo);
            return 1;
        }
        return populate_ok;
    };
    return cfg;
}

UfoConfig fill_config(const FillSpec& spec, std::size_t header_size) {
    if (spec.value.empty()) throw ConfigError("fill value must not be empty");

    UfoConfig cfg;
    cfg.header_size = header_size;
    cfg.element_size = spec.value.size();
    cfg.element_count = spec.element_count;
    cfg.populate = [value = spec.value](const PopulateRequest& req) {
        std::byte* out = req.target.data();
        for (std::uint64_t i = req.start_ix; i < req.end_ix; ++i, out += value.size())
            std::memcpy(out, value.data(), value.size());
        return populate_ok;
    };
    return cfg;
}

UfoConfig csv_column_config(std::shared_ptr<CsvIndex> index, std::size_t column,
                            bool read_only, std::size_t header_size) {
    if (!index) throw ConfigError("null CSV index");
    if (column >= index->columns().size())
        throw ConfigError("CSV has no column " + std::to_string(column));

    UfoConfig cfg;
    cfg.header_size = header_size;
    cfg.element_size = 8; // int64 and float64 alike
    cfg.element_count = index->row_count();
    cfg.read_only = read_only;
    cfg.populate = [index, column](const PopulateRequest& req) {
        return index->populate_column(column, req);
    };
    return cfg;
}

} // namespace ufo
