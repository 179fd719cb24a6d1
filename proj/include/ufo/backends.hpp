#pragma once

#include "ufo/errors.hpp"
#include "ufo/layout.hpp"
#include "ufo/populate.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace ufo {

// ---- arithmetic sequences -------------------------------------------------

// The sequence from, from+by, from+2*by, ... clipped to `to` (inclusive).
struct SeqSpec {
    std::int64_t from = 0;
    std::int64_t to = 0;
    std::int64_t by = 1; // nonzero
};

// Number of terms: max(0, floor((to-from)/by) + 1) when (to-from) and by
// point the same way, else 0. Throws ConfigError when by == 0.
std::uint64_t seq_length(const SeqSpec& spec);

// Term i, wrapping in 64 bits.
std::int64_t seq_value(const SeqSpec& spec, std::uint64_t index);

// Object config producing the sequence as little-endian two's-complement
// integers of element_size bytes (1, 2, 4, or 8; values truncate).
UfoConfig seq_config(const SeqSpec& spec, std::size_t element_size = 8,
                     std::size_t header_size = 0);

// ---- binary files ----------------------------------------------------------

struct FileSpec {
    std::string path;
    std::size_t element_size = 1;
    std::uint64_t element_count = 0; // 0 = every whole element the file holds
    std::uint64_t base_offset = 0;   // bytes skipped at the front
};

// Elements the file can supply: floor((file_size - base_offset) / element_size).
std::uint64_t file_element_count(const std::string& path, std::size_t element_size,
                                 std::uint64_t base_offset = 0);

// Object config reading elements straight from the file. Opens the file now
// and verifies it covers element_count elements; a later truncation surfaces
// as a populate failure (short read), poisoning the object.
UfoConfig file_config(const FileSpec& spec, bool read_only = false,
                      std::size_t header_size = 0);

// ---- constant fill ---------------------------------------------------------

struct FillSpec {
    std::vector<std::byte> value; // one element image; its size is element_size
    std::uint64_t element_count = 0;
};

UfoConfig fill_config(const FillSpec& spec, std::size_t header_size = 0);

// convenience: fill with a trivially copyable value
template <typename T>
UfoConfig fill_config(const T& value, std::uint64_t element_count,
                      std::size_t header_size = 0) {
    FillSpec spec;
    spec.value.resize(sizeof(T));
    __builtin_memcpy(spec.value.data(), &value, sizeof(T));
    spec.element_count = element_count;
    return fill_config(spec, header_size);
}

// ---- CSV columns -----------------------------------------------------------

enum class CsvKind { int64, float64 };

struct CsvColumn {
    std::string name;
    CsvKind kind = CsvKind::float64;
};

// One fully scanned CSV file: row count, per-column kinds, and the byte
// offset of every group_rows-th row so column reads re-parse only a bounded
// tail. Dialect: comma-separated, double-quote quoting with "" escapes, one
// header row, no newlines inside fields.
//
// Kinds are inferred: a column where every cell parses as a 64-bit integer is
// int64; anything else is float64, with cells that fail to parse surfacing
// as quiet NaN. Columns read as 8-byte elements either way.
class CsvIndex {
public:
    static constexpr std::uint64_t group_rows = 1000;

    // Streams through the whole file once. Throws ConfigError on missing
    // header, ragged rows, unterminated quotes, or embedded newlines.
    static std::shared_ptr<CsvIndex> scan(const std::string& path);

    ~CsvIndex();
    CsvIndex(const CsvIndex&) = delete;
    CsvIndex& operator=(const CsvIndex&) = delete;

    std::uint64_t row_count() const noexcept { return rows_; }
    const std::vector<CsvColumn>& columns() const noexcept { return columns_; }
    // offsets_[g] = first byte of row g*group_rows; offsets_[0] is just past
    // the header row
    const std::vector<std::uint64_t>& group_offsets() const noexcept { return offsets_; }

    // Writes rows [req.start_ix, req.end_ix) of one column into req.target
    // as 8-byte values. Performs exactly one seek, to the greatest group
    // offset at or before start_ix. Nonzero on parse failure in an int64
    // column.
    int populate_column(std::size_t column, const PopulateRequest& req) const;

    // how many populate seeks have happened (one per populate_column call)
    std::uint64_t seek_count() const noexcept { return seeks_.load(std::memory_order_relaxed); }

private:
    CsvIndex() = default;

    int fd_ = -1;
    std::uint64_t rows_ = 0;
    std::vector<CsvColumn> columns_;
    std::vector<std::uint64_t> offsets_;
    mutable std::atomic<std::uint64_t> seeks_{0};
};

// Object config exposing one column of a scanned file as 8-byte elements
// (int64 or float64 per the inferred kind).
UfoConfig csv_column_config(std::shared_ptr<CsvIndex> index, std::size_t column,
                            bool read_only = false, std::size_t header_size = 0);

} // namespace ufo
