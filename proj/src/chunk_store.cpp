#include "ufo/chunk_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>

#include "blake3.h"
#include "ufo/errors.hpp"

namespace ufo {

void validate(const WaterMarks& marks) {
    if (marks.low == 0 || marks.low >= marks.high)
        throw ConfigError("water marks must satisfy 0 < low < high");
}

std::string Digest::hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint8_t b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

Digest hash_window(std::span<const std::byte> window) {
    blake3_hasher hasher;
    blake3_hasher_init(&hasher);
    blake3_hasher_update(&hasher, window.data(), window.size());
    Digest digest;
    blake3_hasher_finalize(&hasher, digest.bytes.data(), digest.bytes.size());
    return digest;
}

ResidencyLedger::ResidencyLedger() : ring_(64) {}

void ResidencyLedger::grow() {
    std::vector<Entry> bigger(ring_.size() * 2);
    for (std::size_t i = 0; i < count_; ++i)
        bigger[i] = std::move(ring_[(head_ + i) % ring_.size()]);
    ring_ = std::move(bigger);
    head_ = 0;
}

void ResidencyLedger::note_materialized(ChunkRecord record) {
    if (!queued_.insert({record.object_id, record.chunk_index}).second)
        throw StateError("chunk is already queued in the residency ledger");
    if (count_ == ring_.size()) grow();
    resident_bytes_ += record.length;
    if (resident_bytes_ > peak_resident_bytes_) peak_resident_bytes_ = resident_bytes_;
    ring_[(head_ + count_) % ring_.size()] = Entry{std::move(record), false};
    ++count_;
    ++live_;
}

const ChunkRecord& ResidencyLedger::head() const {
    std::size_t pos = head_;
    std::size_t remaining = count_;
    while (remaining > 0 && ring_[pos].dead) {
        pos = advance(pos);
        --remaining;
    }
    if (remaining == 0) throw StateError("residency ledger is empty");
    return ring_[pos].record;
}

ChunkRecord ResidencyLedger::pop_head() {
    while (count_ > 0 && ring_[head_].dead) {
        head_ = advance(head_);
        --count_;
    }
    if (count_ == 0) throw StateError("residency ledger is empty");
    Entry entry = std::move(ring_[head_]);
    head_ = advance(head_);
    --count_;
    --live_;
    resident_bytes_ -= entry.record.length;
    queued_.erase({entry.record.object_id, entry.record.chunk_index});
    return std::move(entry.record);
}

std::size_t ResidencyLedger::erase_object(std::uint64_t object_id) {
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < count_; ++i) {
        Entry& entry = ring_[(head_ + i) % ring_.size()];
        if (!entry.dead && entry.record.object_id == object_id) {
            entry.dead = true;
            dropped += entry.record.length;
            --live_;
            queued_.erase({entry.record.object_id, entry.record.chunk_index});
        }
    }
    resident_bytes_ -= dropped;
    return dropped;
}

std::vector<ChunkRecord> ResidencyLedger::snapshot() const {
    std::vector<ChunkRecord> out;
    out.reserve(live_);
    for (std::size_t i = 0; i < count_; ++i) {
        const Entry& entry = ring_[(head_ + i) % ring_.size()];
        if (!entry.dead) out.push_back(entry.record);
    }
    return out;
}

void ResidencyLedger::record_collection(std::uint64_t victims, std::size_t end_bytes) {
    ++collections_;
    evicted_chunks_ += victims;
    if (end_bytes > max_collection_end_bytes_) max_collection_end_bytes_ = end_bytes;
}

namespace {

int open_cache_file(const std::string& temp_dir) {
#ifdef O_TMPFILE
    int tmp = ::open(temp_dir.c_str(), O_TMPFILE | O_RDWR | O_CLOEXEC, S_IRUSR | S_IWUSR);
    if (tmp >= 0) return tmp;
#endif
    // Fall back to mkstemp + unlink; either way the file has no name and the
    // OS reclaims it at process exit.
    std::string path = temp_dir + "/ufo-cache-XXXXXX";
    int fd = ::mkstemp(path.data());
    if (fd < 0) throw SystemError("cannot create chunk cache file in " + temp_dir, errno);
    ::unlink(path.c_str());
    int flags = ::fcntl(fd, F_GETFD);
    if (flags >= 0) ::fcntl(fd, F_SETFD, flags | FD_CLOEXEC);
    return fd;
}

} // namespace

ChunkCache::ChunkCache(const std::string& temp_dir, std::size_t chunk_count)
    : fd_(open_cache_file(temp_dir)), present_(chunk_count, false) {}

ChunkCache::~ChunkCache() {
    if (fd_ >= 0) ::close(fd_);
}

void ChunkCache::write_back(std::size_t chunk_index, std::size_t byte_lo,
                            std::span<const std::byte> window) {
    if (chunk_index >= present_.size()) throw RangeError("chunk index outside the cache");
    std::size_t done = 0;
    while (done < window.size()) {
        ssize_t n = ::pwrite(fd_, window.data() + done, window.size() - done,
                             static_cast<off_t>(byte_lo + done));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw SystemError("chunk cache write failed", errno);
        }
        done += static_cast<std::size_t>(n);
    }
    present_[chunk_index] = true;
    ++writes_;
}

std::optional<std::vector<std::byte>> ChunkCache::read(std::size_t chunk_index,
                                                       std::size_t byte_lo,
                                                       std::size_t length) const {
    if (chunk_index >= present_.size() || !present_[chunk_index]) return std::nullopt;
    std::vector<std::byte> out(length);
    std::size_t done = 0;
    while (done < length) {
        ssize_t n = ::pread(fd_, out.data() + done, length - done,
                            static_cast<off_t>(byte_lo + done));
        if (n < 0) {
            if (errno == EINTR) continue;
            throw SystemError("chunk cache read failed", errno);
        }
        if (n == 0) throw SystemError("chunk cache truncated", EIO);
        done += static_cast<std::size_t>(n);
    }
    return out;
}

bool ChunkCache::present(std::size_t chunk_index) const {
    return chunk_index < present_.size() && present_[chunk_index];
}

std::size_t ChunkCache::file_bytes() const {
    struct stat st{};
    if (::fstat(fd_, &st) != 0) throw SystemError("cannot stat chunk cache file", errno);
    return static_cast<std::size_t>(st.st_size);
}

DematResult dematerialize(ChunkCache* cache, const ChunkRecord& record,
                          std::span<const std::byte> window, bool read_only,
                          const std::function<void()>& reclaim) {
    DematResult result = DematResult::skipped_read_only;
    if (!read_only) {
        Digest now = hash_window(window);
        if (now != record.digest) {
            if (cache == nullptr) throw StateError("dirty chunk but object has no cache");
            cache->write_back(record.chunk_index, record.byte_lo, window);
            result = DematResult::wrote_back;
        } else {
            result = DematResult::kept_clean;
        }
    }
    reclaim();
    return result;
}

} // namespace ufo
