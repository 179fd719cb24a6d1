#pragma once

#include "ufo/chunk_store.hpp"
#include "ufo/core.hpp"
#include "ufo/fault_backend.hpp"
#include "ufo/layout.hpp"

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <vector>

namespace ufo {

struct EngineParams {
    WaterMarks marks;
    std::size_t chunk_size = 0;
    BackendChoice backend = BackendChoice::automatic;
    std::string temp_dir;
    bool abort_on_populate_failure = false;
};

// The fault-service engine. One dedicated thread owns every mutable
// structure here: the object registry, the residency ledger, and the chunk
// caches. Application threads reach it two ways: by touching object memory
// (which blocks in the backend until the chunk is installed) and through
// sync(), which posts a closure and waits for its reply. Closures invoked on
// the service thread itself run inline, so populate callbacks may use the
// sanctioned helpers without deadlocking.
class Engine {
public:
    explicit Engine(const EngineParams& params);
    ~Engine();

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    struct Created {
        std::uint64_t id = 0;
        std::uintptr_t base = 0;
        UfoLayout layout{};
        std::shared_ptr<ObjectShared> shared;
    };

    Created create_object(UfoConfig config);
    void free_object(std::uint64_t id);

    // Copies elements [elem_lo, elem_hi) into out, materializing chunks
    // through the explicit service-thread path (no faults). This is the one
    // helper populate callbacks may call; everything else they touch must be
    // plain memory.
    void read_range(std::uint64_t id, std::uint64_t elem_lo, std::uint64_t elem_hi, void* out);

    // Dematerializes every resident chunk through the normal hash/write-back
    // pipeline, regardless of the water marks.
    void evict_all();

    CoreStats stats();
    ObjectStats object_stats(std::uint64_t id);

    void shutdown(); // frees all objects, stops the loop; idempotent
    bool alive() const noexcept { return !shut_.load(std::memory_order_acquire); }

    BackendKind backend_kind() const noexcept { return backend_kind_; }
    const WaterMarks& marks() const noexcept { return params_.marks; }
    std::size_t chunk_size() const noexcept { return params_.chunk_size; }

private:
    struct ObjectRecord {
        std::uint64_t id = 0;
        UfoConfig config;
        UfoLayout layout{};
        Region region{};
        std::unique_ptr<ChunkCache> cache; // null for read-only objects
        std::shared_ptr<ObjectShared> shared;
        std::vector<bool> materialized;
        std::size_t resident_chunks = 0;

        std::uint64_t faults = 0;
        std::uint64_t populate_calls = 0;
        std::uint64_t hash_calls = 0;
        std::uint64_t write_backs = 0;
        std::uint64_t cache_loads = 0;
        std::uint64_t evictions = 0;
        std::uint64_t materializations = 0;
    };

    using Task = std::function<void(bool engine_dead)>;

    void loop();
    void run_tasks();
    void post(Task task);
    void dispatch(const FaultBackend::Event& event);
    void handle_fault(const FaultEvent& fault);

    ObjectRecord* resolve(std::uintptr_t address);
    ObjectRecord& require_object(std::uint64_t id);

    void materialize_chunk(ObjectRecord& obj, const ChunkExtent& ext);
    int run_populate(ObjectRecord& obj, const ChunkExtent& ext, std::span<std::byte> staging,
                     std::string& threw);
    void demat_record(const ChunkRecord& victim);
    void run_collection();
    void poison(ObjectRecord& obj, const std::string& reason);
    void free_object_locked(ObjectRecord& obj);
    void read_range_locked(std::uint64_t id, std::uint64_t elem_lo, std::uint64_t elem_hi,
                           void* out);

    // Runs f on the service thread and returns its result; runs it inline
    // when already there.
    template <typename F>
    auto sync(F&& f) -> decltype(f()) {
        if (std::this_thread::get_id() == thread_.get_id()) return f();
        if (!alive()) throw StateError("core is shut down");
        using R = decltype(f());
        std::promise<R> promise;
        auto future = promise.get_future();
        post([&f, &promise](bool dead) {
            if (dead) {
                promise.set_exception(
                    std::make_exception_ptr(StateError("core is shut down")));
                return;
            }
            try {
                if constexpr (std::is_void_v<R>) {
                    f();
                    promise.set_value();
                } else {
                    promise.set_value(f());
                }
            } catch (...) {
                promise.set_exception(std::current_exception());
            }
        });
        return future.get();
    }

    EngineParams params_;
    std::unique_ptr<FaultBackend> backend_;
    BackendKind backend_kind_;
    std::size_t page_size_;

    ResidencyLedger ledger_;
    std::unordered_map<std::uint64_t, ObjectRecord> objects_;
    std::map<std::uintptr_t, std::uint64_t> by_base_;
    std::uint64_t next_id_ = 1;

    // (object, chunk) pairs currently inside materialize_chunk; rejects
    // recursive materialization of the same chunk through read_range.
    std::vector<std::pair<std::uint64_t, std::size_t>> materializing_;

    // counters carried over from freed objects so totals never go backwards
    std::uint64_t retired_faults_ = 0;
    std::uint64_t retired_populate_calls_ = 0;
    std::uint64_t retired_hash_calls_ = 0;
    std::uint64_t retired_write_backs_ = 0;
    std::uint64_t retired_cache_loads_ = 0;

    std::mutex task_mx_;
    std::deque<Task> tasks_;
    bool queue_closed_ = false; // set under task_mx_ once the loop is gone
    int task_efd_ = -1;

    bool stopping_ = false;           // service-thread private
    std::atomic<bool> shut_{false};   // set once shutdown begins
    std::once_flag shutdown_once_;
    std::thread thread_;
};

} // namespace ufo
