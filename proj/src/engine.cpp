#include "engine.hpp"

#include "log.hpp"

#include <poll.h>
#include <sys/eventfd.h>
#include <unistd.h>

#include <cerrno>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace ufo {

namespace {

[[noreturn]] void fatal(const char* what, std::uintptr_t address) {
    // A fault we cannot answer leaves the faulting thread blocked forever;
    // there is no caller to hand the error to, so say why and stop.
    std::fprintf(stderr, "[ufo] fatal: %s (address 0x%" PRIxPTR ")\n", what, address);
    std::abort();
}

} // namespace

Engine::Engine(const EngineParams& params) : params_(params) {
    validate(params_.marks);
    page_size_ = page_size();
    if (params_.chunk_size == 0 || params_.chunk_size % page_size_ != 0)
        throw ConfigError("chunk size must be a positive multiple of the page size");
    if (params_.temp_dir.empty())
        throw ConfigError("temp_dir must not be empty");

    backend_ = make_backend(params_.backend);
    backend_kind_ = backend_->kind();

    task_efd_ = ::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
    if (task_efd_ < 0) throw SystemError("eventfd", errno);

    thread_ = std::thread([this] { loop(); });
}

Engine::~Engine() {
    shutdown();
    ::close(task_efd_);
}

void Engine::post(Task task) {
    {
        std::lock_guard lock(task_mx_);
        if (queue_closed_) {
            task(true);
            return;
        }
        tasks_.push_back(std::move(task));
    }
    std::uint64_t one = 1;
    while (::write(task_efd_, &one, sizeof one) < 0 && errno == EINTR) {
    }
}

void Engine::run_tasks() {
    std::deque<Task> batch;
    {
        std::lock_guard lock(task_mx_);
        batch.swap(tasks_);
    }
    for (auto& task : batch) task(false);
}

void Engine::loop() {
    for (;;) {
        run_tasks();
        if (stopping_) break;
        if (backend_->has_pending()) {
            dispatch(backend_->next_event(0));
            continue;
        }
        struct pollfd fds[2] = {{backend_->poll_fd(), POLLIN, 0}, {task_efd_, POLLIN, 0}};
        int n = ::poll(fds, 2, -1);
        if (n < 0) {
            if (errno == EINTR) continue;
            log_warn("service poll failed: %s", std::strerror(errno));
            break;
        }
        if (fds[1].revents != 0) {
            std::uint64_t drained;
            while (::read(task_efd_, &drained, sizeof drained) < 0 && errno == EINTR) {
            }
        }
        if (fds[0].revents != 0) dispatch(backend_->next_event(0));
    }
}

void Engine::dispatch(const FaultBackend::Event& event) {
    switch (event.kind) {
    case FaultBackend::Event::Kind::fault:
        try {
            handle_fault(event.fault);
        } catch (const std::exception& ex) {
            fatal(ex.what(), event.fault.address);
        }
        break;
    case FaultBackend::Event::Kind::closed:
        stopping_ = true;
        break;
    case FaultBackend::Event::Kind::timeout:
        break;
    }
}

Engine::ObjectRecord* Engine::resolve(std::uintptr_t address) {
    auto it = by_base_.upper_bound(address);
    if (it == by_base_.begin()) return nullptr;
    --it;
    ObjectRecord& obj = objects_.at(it->second);
    if (address - it->first >= obj.layout.total_reserved) return nullptr;
    return &obj;
}

Engine::ObjectRecord& Engine::require_object(std::uint64_t id) {
    auto it = objects_.find(id);
    if (it == objects_.end()) throw StateError("unknown or already freed object");
    return it->second;
}

void Engine::handle_fault(const FaultEvent& fault) {
    ObjectRecord* obj = resolve(fault.address);
    if (obj == nullptr) fatal("page fault in memory no live object owns", fault.address);
    obj->faults++;

    ChunkExtent ext = chunk_of_offset(obj->layout, fault.address - obj->region.base);
    if (obj->materialized[ext.chunk_index]) {
        // A second thread faulted the same chunk before the first install
        // landed, or the backend re-reported a resolved page. Already served.
        log_debug("stale fault for object %" PRIu64 " chunk %zu", obj->id, ext.chunk_index);
        return;
    }
    materialize_chunk(*obj, ext);
}

void Engine::poison(ObjectRecord& obj, const std::string& reason) {
    if (params_.abort_on_populate_failure) {
        std::fprintf(stderr, "[ufo] fatal: object %" PRIu64 ": %s\n", obj.id, reason.c_str());
        std::abort();
    }
    int expected = static_cast<int>(ObjectStatus::live);
    if (obj.shared->status.load(std::memory_order_relaxed) == expected) {
        obj.shared->poison_reason = reason; // write-once, before the flip below
        obj.shared->status.store(static_cast<int>(ObjectStatus::poisoned),
                                 std::memory_order_release);
        log_warn("object %" PRIu64 " poisoned: %s", obj.id, reason.c_str());
    }
}

int Engine::run_populate(ObjectRecord& obj, const ChunkExtent& ext,
                         std::span<std::byte> staging, std::string& threw) {
    const UfoLayout& lo = obj.layout;
    const std::size_t e = lo.element_size;
    const std::size_t span_lo = lo.body_start + ext.elem_lo * e;
    const std::size_t span_hi = lo.body_start + ext.elem_hi * e;

    PopulateRequest req{};
    req.start_ix = ext.elem_lo;
    req.end_ix = ext.elem_hi;
    req.user_data = obj.config.user_data;

    // When the element run starts exactly at the window and ends inside it,
    // populate writes straight into the staging buffer. Otherwise (elements
    // straddling either window edge) it fills a whole-element scratch buffer
    // and only the window's slice is kept; the neighbouring chunk will
    // regenerate its own copy of the shared element.
    std::vector<std::byte> scratch;
    const bool direct = span_lo == ext.byte_lo && span_hi <= ext.byte_hi;
    if (direct) {
        req.target = staging.subspan(0, span_hi - span_lo);
    } else {
        scratch.resize(span_hi - span_lo);
        req.target = scratch;
    }

    std::vector<std::uintptr_t> nested;
    int rc = backend_->run_guarded(
        [&]() -> int {
            try {
                return obj.config.populate(req);
            } catch (const std::exception& ex) {
                threw = ex.what();
                log_warn("populate for object %" PRIu64 " threw: %s", obj.id, ex.what());
                return -1;
            } catch (...) {
                threw = "unknown exception";
                log_warn("populate for object %" PRIu64 " threw", obj.id);
                return -1;
            }
        },
        nested);
    obj.populate_calls++;

    if (rc == populate_nested_access) {
        for (std::uintptr_t address : nested)
            log_warn("object %" PRIu64 ": populate touched unmaterialized managed memory at 0x%" PRIxPTR,
                     obj.id, address);
    }
    if (rc != populate_ok) return rc;

    if (!direct) {
        // overlap of [span_lo, span_hi) with the window, starting at byte_lo
        const std::size_t take = std::min(span_hi, ext.byte_hi) - ext.byte_lo;
        std::memcpy(staging.data(), scratch.data() + (ext.byte_lo - span_lo), take);
    }
    return populate_ok;
}

void Engine::materialize_chunk(ObjectRecord& obj, const ChunkExtent& ext) {
    const auto key = std::make_pair(obj.id, ext.chunk_index);
    for (const auto& active : materializing_)
        if (active == key)
            throw StateError("recursive materialization of the chunk being populated");
    materializing_.push_back(key);
    struct Pop {
        std::vector<std::pair<std::uint64_t, std::size_t>>& stack;
        ~Pop() { stack.pop_back(); }
    } pop{materializing_};

    std::vector<std::byte> staging(ext.length());

    bool have_bytes = false;
    if (obj.cache && obj.cache->present(ext.chunk_index)) {
        try {
            auto cached = obj.cache->read(ext.chunk_index, ext.byte_lo, ext.length());
            staging = std::move(*cached);
            obj.cache_loads++;
            have_bytes = true;
        } catch (const UfoError& ex) {
            poison(obj, std::string("cache read failed: ") + ex.what());
            std::fill(staging.begin(), staging.end(), std::byte{0});
        }
    }

    const bool live =
        obj.shared->status.load(std::memory_order_relaxed) == static_cast<int>(ObjectStatus::live);
    if (!have_bytes && !ext.header && live && ext.elem_lo < ext.elem_hi) {
        std::string threw;
        int rc = run_populate(obj, ext, staging, threw);
        if (rc != populate_ok) {
            poison(obj, rc == populate_nested_access
                            ? "populate touched unmaterialized managed memory"
                            : !threw.empty()
                                  ? "populate threw: " + threw
                                  : "populate failed with status " + std::to_string(rc));
            std::fill(staging.begin(), staging.end(), std::byte{0});
        }
    }
    // header chunks and poisoned objects materialize as zeros (or cache bytes)

    Digest digest{};
    if (!obj.config.read_only) {
        digest = hash_window(staging);
        obj.hash_calls++;
    }

    backend_->install(obj.region, ext.byte_lo, staging);
    obj.materialized[ext.chunk_index] = true;
    obj.resident_chunks++;
    obj.materializations++;

    ledger_.note_materialized(
        {obj.id, ext.chunk_index, ext.byte_lo, ext.length(), digest});
    run_collection();
}

void Engine::demat_record(const ChunkRecord& victim) {
    auto it = objects_.find(victim.object_id);
    if (it == objects_.end()) {
        // erase_object() tombstones on free, so this cannot happen; guard anyway
        log_warn("eviction victim for unknown object %" PRIu64, victim.object_id);
        return;
    }
    ObjectRecord& obj = it->second;

    std::span<const std::byte> window{
        reinterpret_cast<const std::byte*>(obj.region.base + victim.byte_lo), victim.length};
    bool reclaimed = false;
    auto reclaim = [&] {
        backend_->reclaim(obj.region, victim.byte_lo, victim.length);
        reclaimed = true;
    };
    try {
        DematResult result =
            dematerialize(obj.cache.get(), victim, window, obj.config.read_only, reclaim);
        if (result != DematResult::skipped_read_only) obj.hash_calls++;
        if (result == DematResult::wrote_back) obj.write_backs++;
    } catch (const UfoError& ex) {
        poison(obj, std::string("write-back failed: ") + ex.what());
        if (!reclaimed) reclaim(); // drop the memory regardless; contents are untrusted now
    }
    obj.materialized[victim.chunk_index] = false;
    obj.resident_chunks--;
    obj.evictions++;
}

void Engine::run_collection() {
    maybe_collect(ledger_, params_.marks, [this](const ChunkRecord& victim) { demat_record(victim); });
}

Engine::Created Engine::create_object(UfoConfig config) {
    return sync([this, config = std::move(config)]() mutable -> Created {
        if (config.element_count > 0 && !config.populate)
            throw ConfigError("an object with elements needs a populate function");
        if (config.chunk_size == 0) config.chunk_size = params_.chunk_size;
        UfoLayout layout = compute_layout(config, page_size_);

        ObjectRecord rec;
        rec.id = next_id_++;
        rec.layout = layout;
        rec.shared = std::make_shared<ObjectShared>();
        if (!config.read_only && layout.chunk_count() > 0)
            rec.cache = std::make_unique<ChunkCache>(params_.temp_dir, layout.chunk_count());
        if (layout.total_reserved > 0) rec.region = backend_->reserve(layout.total_reserved);
        rec.materialized.assign(layout.chunk_count(), false);
        rec.config = std::move(config);

        Created out{rec.id, rec.region.base, rec.layout, rec.shared};
        if (rec.region) by_base_.emplace(rec.region.base, rec.id);
        objects_.emplace(rec.id, std::move(rec));
        log_info("object %" PRIu64 " created: %zu bytes reserved", out.id,
                 out.layout.total_reserved);
        return out;
    });
}

void Engine::free_object_locked(ObjectRecord& obj) {
    ledger_.erase_object(obj.id);
    if (obj.region) {
        by_base_.erase(obj.region.base);
        backend_->release(obj.region);
    }
    obj.shared->status.store(static_cast<int>(ObjectStatus::freed), std::memory_order_release);

    retired_faults_ += obj.faults;
    retired_populate_calls_ += obj.populate_calls;
    retired_hash_calls_ += obj.hash_calls;
    retired_write_backs_ += obj.write_backs;
    retired_cache_loads_ += obj.cache_loads;
}

void Engine::free_object(std::uint64_t id) {
    sync([this, id] {
        auto it = objects_.find(id);
        if (it == objects_.end()) throw StateError("free of an unknown or already freed object");
        free_object_locked(it->second);
        objects_.erase(it);
    });
}

void Engine::read_range_locked(std::uint64_t id, std::uint64_t elem_lo, std::uint64_t elem_hi,
                               void* out) {
    ObjectRecord& obj = require_object(id);
    auto poisoned = [&] {
        return obj.shared->status.load(std::memory_order_relaxed) ==
               static_cast<int>(ObjectStatus::poisoned);
    };
    if (poisoned()) throw PoisonedError("object is poisoned: " + obj.shared->poison_reason);
    if (elem_lo > elem_hi || elem_hi > obj.layout.element_count)
        throw RangeError("element range outside the object");
    if (elem_lo == elem_hi) return;

    const UfoLayout& lo = obj.layout;
    const std::size_t span_lo = lo.body_start + elem_lo * lo.element_size;
    const std::size_t span_hi = lo.body_start + elem_hi * lo.element_size;
    std::byte* dst = static_cast<std::byte*>(out);

    // Copy chunk by chunk, each immediately after its materialization: a
    // later chunk's collection may evict an earlier one.
    std::size_t pos = span_lo;
    while (pos < span_hi) {
        ChunkExtent ext = chunk_of_offset(lo, pos);
        int attempts = 0;
        while (!obj.materialized[ext.chunk_index]) {
            if (++attempts > 16)
                throw StateError("water marks too small to keep one chunk resident");
            materialize_chunk(obj, ext);
            if (poisoned()) throw PoisonedError("object is poisoned: " + obj.shared->poison_reason);
        }
        const std::size_t take = std::min(span_hi, ext.byte_hi) - pos;
        std::memcpy(dst + (pos - span_lo),
                    reinterpret_cast<const std::byte*>(obj.region.base + pos), take);
        pos += take;
    }
}

void Engine::read_range(std::uint64_t id, std::uint64_t elem_lo, std::uint64_t elem_hi,
                        void* out) {
    sync([&] { read_range_locked(id, elem_lo, elem_hi, out); });
}

void Engine::evict_all() {
    sync([this] {
        std::uint64_t victims = 0;
        while (!ledger_.empty()) {
            ChunkRecord victim = ledger_.pop_head();
            demat_record(victim);
            ++victims;
        }
        if (victims > 0) ledger_.record_collection(victims, ledger_.resident_bytes());
    });
}

CoreStats Engine::stats() {
    return sync([this]() -> CoreStats {
        CoreStats s;
        s.resident_bytes = ledger_.resident_bytes();
        s.peak_resident_bytes = ledger_.peak_resident_bytes();
        s.collections = ledger_.collections();
        s.evicted_chunks = ledger_.evicted_chunks();
        s.max_collection_end_bytes = ledger_.max_collection_end_bytes();
        s.live_objects = objects_.size();
        s.faults = retired_faults_;
        s.populate_calls = retired_populate_calls_;
        s.hash_calls = retired_hash_calls_;
        s.write_backs = retired_write_backs_;
        s.cache_loads = retired_cache_loads_;
        for (const auto& [id, obj] : objects_) {
            s.faults += obj.faults;
            s.populate_calls += obj.populate_calls;
            s.hash_calls += obj.hash_calls;
            s.write_backs += obj.write_backs;
            s.cache_loads += obj.cache_loads;
        }
        return s;
    });
}

ObjectStats Engine::object_stats(std::uint64_t id) {
    return sync([this, id]() -> ObjectStats {
        ObjectRecord& obj = require_object(id);
        ObjectStats s;
        s.status = static_cast<ObjectStatus>(obj.shared->status.load(std::memory_order_relaxed));
        s.poison_reason = obj.shared->poison_reason;
        s.faults = obj.faults;
        s.populate_calls = obj.populate_calls;
        s.hash_calls = obj.hash_calls;
        s.write_backs = obj.write_backs;
        s.cache_loads = obj.cache_loads;
        s.evictions = obj.evictions;
        s.materializations = obj.materializations;
        s.resident_chunks = obj.resident_chunks;
        s.cache_file_bytes = obj.cache ? obj.cache->file_bytes() : 0;
        return s;
    });
}

void Engine::shutdown() {
    std::call_once(shutdown_once_, [this] {
        sync([this] {
            std::vector<std::uint64_t> ids;
            ids.reserve(objects_.size());
            for (const auto& [id, obj] : objects_) ids.push_back(id);
            for (std::uint64_t id : ids) {
                free_object_locked(objects_.at(id));
                objects_.erase(id);
            }
            stopping_ = true;
        });
        shut_.store(true, std::memory_order_release);
        if (thread_.joinable()) thread_.join();

        std::deque<Task> leftovers;
        {
            std::lock_guard lock(task_mx_);
            queue_closed_ = true;
            leftovers.swap(tasks_);
        }
        for (auto& task : leftovers) task(true);

        backend_->shutdown();
    });
}

} // namespace ufo
