#include "ufo/backends.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>
#include <limits>

namespace ufo {

namespace {

bool parse_i64(const std::string& text, std::int64_t& out) {
    if (text.empty()) return false;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out, 10);
    return ec == std::errc{} && ptr == end;
}

bool parse_f64(const std::string& text, double& out) {
    if (text.empty()) return false;
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

// Buffered row scanner over a pread-able fd starting at a byte offset.
// Multiple readers may run against one fd; each tracks its own position.
class RowReader {
public:
    RowReader(int fd, std::uint64_t start) : fd_(fd), pos_(start) {}

    // Byte offset of the next unread character.
    std::uint64_t offset() const noexcept { return pos_ - (len_ - off_); }

    // Parses one row into `cells` (reused). False at clean end of file.
    // Throws ConfigError on quoting errors or embedded newlines.
    bool next_row(std::vector<std::string>& cells) {
        cells.clear();
        if (peek() < 0) return false;
        std::string field;
        for (;;) {
            field.clear();
            int c = peek();
            if (c == '"') {
                get();
                for (;;) {
                    c = get();
                    if (c < 0) throw ConfigError("unterminated quote in CSV");
                    if (c == '\n') throw ConfigError("newline inside a quoted CSV field");
                    if (c == '"') {
                        if (peek() == '"') {
                            get();
                            field.push_back('"');
                            continue;
                        }
                        break;
                    }
                    field.push_back(static_cast<char>(c));
                }
                c = get();
                if (c == '\r' && peek() == '\n') c = get();
                if (c != ',' && c != '\n' && c >= 0)
                    throw ConfigError("text after a closing quote in CSV");
            } else {
                for (;;) {
                    c = get();
                    if (c < 0 || c == ',' || c == '\n') break;
                    field.push_back(static_cast<char>(c));
                }
                if (c == '\n' && !field.empty() && field.back() == '\r') field.pop_back();
            }
            cells.push_back(std::move(field));
            if (c != ',') return true; // newline or end of file closes the row
        }
    }

private:
    int peek() {
        if (off_ == len_ && !refill()) return -1;
        return static_cast<unsigned char>(buf_[off_]);
    }
    int get() {
        int c = peek();
        if (c >= 0) ++off_;
        return c;
    }
    bool refill() {
        ssize_t r;
        do {
            r = ::pread(fd_, buf_, sizeof buf_, static_cast<off_t>(pos_));
        } while (r < 0 && errno == EINTR);
        if (r < 0) throw SystemError("pread(csv)", errno);
        if (r == 0) return false;
        pos_ += static_cast<std::uint64_t>(r);
        len_ = static_cast<std::size_t>(r);
        off_ = 0;
        return true;
    }

    int fd_;
    std::uint64_t pos_; // file offset one past the buffered bytes
    std::size_t off_ = 0;
    std::size_t len_ = 0;
    char buf_[1 << 16];
};

} // namespace

std::shared_ptr<CsvIndex> CsvIndex::scan(const std::string& path) {
    std::shared_ptr<CsvIndex> index(new CsvIndex);
    index->fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (index->fd_ < 0)
        throw ConfigError("cannot open '" + path + "': " + std::strerror(errno));

    RowReader reader(index->fd_, 0);
    std::vector<std::string> cells;
    if (!reader.next_row(cells)) throw ConfigError("'" + path + "': CSV needs a header row");
    const std::size_t width = cells.size();
    index->columns_.reserve(width);
    for (auto& name : cells) index->columns_.push_back({std::move(name), CsvKind::int64});

    // a column stays int64 only while every cell parses as one
    std::vector<bool> all_int(width, true);
    std::uint64_t row = 0;
    for (;;) {
        const std::uint64_t at = reader.offset();
        if (!reader.next_row(cells)) break;
        if (cells.size() != width)
            throw ConfigError("'" + path + "': row " + std::to_string(row + 1) + " has " +
                              std::to_string(cells.size()) + " fields, header has " +
                              std::to_string(width));
        if (row % group_rows == 0) index->offsets_.push_back(at);
        for (std::size_t c = 0; c < width; ++c) {
            std::int64_t ignored;
            if (all_int[c] && !parse_i64(cells[c], ignored)) all_int[c] = false;
        }
        ++row;
    }
    index->rows_ = row;
    for (std::size_t c = 0; c < width; ++c)
        if (!all_int[c]) index->columns_[c].kind = CsvKind::float64;
    return index;
}

CsvIndex::~CsvIndex() {
    if (fd_ >= 0) ::close(fd_);
}

int CsvIndex::populate_column(std::size_t column, const PopulateRequest& req) const {
    if (column >= columns_.size()) return 2;
    if (req.start_ix >= req.end_ix) return populate_ok;

    const CsvKind kind = columns_[column].kind;
    const std::uint64_t group = req.start_ix / group_rows;
    RowReader reader(fd_, offsets_.at(group));
    seeks_.fetch_add(1, std::memory_order_relaxed);

    std::vector<std::string> cells;
    std::byte* out = req.target.data();
    for (std::uint64_t row = group * group_rows; row < req.end_ix; ++row) {
        if (!reader.next_row(cells) || cells.size() <= column)
            return 2; // the file shrank or lost columns since the scan
        if (row < req.start_ix) continue;

        const std::string& cell = cells[column];
        if (kind == CsvKind::int64) {
            std::int64_t value;
            if (!parse_i64(cell, value)) return 3;
            std::memcpy(out, &value, 8);
        } else {
            double value;
            if (!parse_f64(cell, value)) value = std::numeric_limits<double>::quiet_NaN();
            std::memcpy(out, &value, 8);
        }
        out += 8;
    }
    return populate_ok;
}

} // namespace ufo
