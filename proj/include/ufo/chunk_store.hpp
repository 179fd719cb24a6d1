#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace ufo {

// Resident-byte thresholds. Exceeding `high` triggers collection down to `low`.
struct WaterMarks {
    std::size_t high = 0;
    std::size_t low = 0;
};

// Throws ConfigError unless 0 < low < high.
void validate(const WaterMarks& marks);

// BLAKE3-256 content digest of a chunk's page-aligned window.
struct Digest {
    std::array<std::uint8_t, 32> bytes{};

    friend bool operator==(const Digest&, const Digest&) = default;
    std::string hex() const;
};

Digest hash_window(std::span<const std::byte> window);

// One resident chunk as tracked by the ledger.
struct ChunkRecord {
    std::uint64_t object_id = 0;
    std::size_t chunk_index = 0; // tiling index within the object
    std::size_t byte_lo = 0;     // window offset inside the reservation
    std::size_t length = 0;      // window bytes
    Digest digest{};             // content hash at materialization; unset for read-only objects
};

// FIFO queue of materialized chunks in materialization order, oldest first,
// stored in a circular buffer, plus the resident-byte total. Removing an
// object's entries tombstones them in place; collection skips tombstones.
class ResidencyLedger {
public:
    ResidencyLedger();

    // Appends a record. Throws StateError when the (object, chunk) pair is
    // already queued.
    void note_materialized(ChunkRecord record);

    bool empty() const noexcept { return live_ == 0; }
    std::size_t size() const noexcept { return live_; }
    std::size_t resident_bytes() const noexcept { return resident_bytes_; }

    // Oldest live record. Precondition: !empty().
    const ChunkRecord& head() const;
    ChunkRecord pop_head();

    // Tombstones every entry of one object; returns the bytes dropped.
    std::size_t erase_object(std::uint64_t object_id);

    // Materialization order of the live entries, oldest first.
    std::vector<ChunkRecord> snapshot() const;

    // instrumentation
    std::size_t peak_resident_bytes() const noexcept { return peak_resident_bytes_; }
    std::uint64_t collections() const noexcept { return collections_; }
    std::uint64_t evicted_chunks() const noexcept { return evicted_chunks_; }
    std::size_t max_collection_end_bytes() const noexcept { return max_collection_end_bytes_; }
    void record_collection(std::uint64_t victims, std::size_t end_bytes);

private:
    struct Entry {
        ChunkRecord record;
        bool dead = false;
    };

    struct KeyHash {
        std::size_t operator()(const std::pair<std::uint64_t, std::size_t>& k) const noexcept {
            return std::hash<std::uint64_t>{}(k.first) ^ (std::hash<std::size_t>{}(k.second) * 0x9e3779b97f4a7c15ull);
        }
    };

    void grow();
    std::size_t advance(std::size_t pos) const noexcept { return (pos + 1) % ring_.size(); }

    std::vector<Entry> ring_;
    std::size_t head_ = 0;  // oldest occupied slot
    std::size_t count_ = 0; // occupied slots, tombstones included
    std::size_t live_ = 0;
    std::size_t resident_bytes_ = 0;
    std::unordered_set<std::pair<std::uint64_t, std::size_t>, KeyHash> queued_;

    std::size_t peak_resident_bytes_ = 0;
    std::uint64_t collections_ = 0;
    std::uint64_t evicted_chunks_ = 0;
    std::size_t max_collection_end_bytes_ = 0;
};

// Watermark rule: when resident bytes exceed marks.high, dematerializes from
// the head (longest-residing first) until they drop to marks.low or the
// ledger empties. `demat` is invoked once per victim after its removal from
// the ledger. Returns the victims in eviction order.
template <typename Demat>
std::vector<ChunkRecord> maybe_collect(ResidencyLedger& ledger, const WaterMarks& marks, Demat&& demat) {
    std::vector<ChunkRecord> evicted;
    if (ledger.resident_bytes() <= marks.high) return evicted;
    while (ledger.resident_bytes() > marks.low && !ledger.empty()) {
        ChunkRecord victim = ledger.pop_head();
        demat(victim);
        evicted.push_back(std::move(victim));
    }
    ledger.record_collection(evicted.size(), ledger.resident_bytes());
    return evicted;
}

// Per-object write-back cache: an unlinked temporary file holding the last
// written-back bytes of each dirty chunk at the chunk's in-object byte
// offset. The file is sparse and grows lazily; it disappears with the object.
class ChunkCache {
public:
    ChunkCache(const std::string& temp_dir, std::size_t chunk_count);
    ~ChunkCache();

    ChunkCache(const ChunkCache&) = delete;
    ChunkCache& operator=(const ChunkCache&) = delete;

    void write_back(std::size_t chunk_index, std::size_t byte_lo, std::span<const std::byte> window);

    // Slot bytes iff the chunk was written back before; nullopt otherwise.
    std::optional<std::vector<std::byte>> read(std::size_t chunk_index, std::size_t byte_lo,
                                               std::size_t length) const;

    bool present(std::size_t chunk_index) const;
    std::size_t file_bytes() const; // current file size as reported by the filesystem
    std::uint64_t write_count() const noexcept { return writes_; }

private:
    int fd_ = -1;
    std::vector<bool> present_;
    std::uint64_t writes_ = 0;
};

enum class DematResult {
    kept_clean,        // digest unchanged, nothing cached
    wrote_back,        // digest differed, window stored in the cache
    skipped_read_only, // object is read-only, no hash computed
};

// One dematerialization step: hash the live window (unless read-only),
// write it back when it no longer matches the record's materialization
// digest, then release the memory through `reclaim`.
DematResult dematerialize(ChunkCache* cache, const ChunkRecord& record,
                          std::span<const std::byte> window, bool read_only,
                          const std::function<void()>& reclaim);

} // namespace ufo
