#include "ufo/core.hpp"

#include "engine.hpp"
#include "log.hpp"

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <cstring>

namespace ufo {

namespace {

std::atomic<bool> g_core_live{false};

std::optional<std::string> env_string(const char* name) {
    const char* value = std::getenv(name);
    if (value == nullptr || *value == '\0') return std::nullopt;
    return std::string(value);
}

std::size_t size_or(const std::optional<std::size_t>& param, const char* env_name,
                    std::size_t fallback) {
    if (param) return *param;
    if (auto text = env_string(env_name)) {
        try {
            return parse_size(*text);
        } catch (const ConfigError& ex) {
            throw ConfigError(std::string(env_name) + ": " + ex.what());
        }
    }
    return fallback;
}

BackendChoice parse_backend(const std::string& name) {
    if (name == "auto" || name == "automatic") return BackendChoice::automatic;
    if (name == "userfault" || name == "uffd") return BackendChoice::userfault;
    if (name == "trap" || name == "sigsegv") return BackendChoice::trap;
    throw ConfigError("unknown backend '" + name + "' (want auto, userfault, or trap)");
}

EngineParams resolve(const CoreParams& params) {
    constexpr std::size_t GiB = std::size_t{1} << 30;
    constexpr std::size_t MiB = std::size_t{1} << 20;

    EngineParams out;
    out.marks.high = size_or(params.high_water, "UFO_HIGH_WATER", 2 * GiB);
    out.marks.low = size_or(params.low_water, "UFO_LOW_WATER", 1 * GiB);
    out.chunk_size = size_or(params.chunk_size, "UFO_CHUNK_SIZE", 1 * MiB);

    std::string backend = "auto";
    if (params.backend)
        backend = *params.backend;
    else if (auto env = env_string("UFO_BACKEND"))
        backend = *env;
    out.backend = parse_backend(backend);

    if (params.temp_dir)
        out.temp_dir = *params.temp_dir;
    else if (auto env = env_string("UFO_TMPDIR"))
        out.temp_dir = *env;
    else if (auto env = env_string("TMPDIR"))
        out.temp_dir = *env;
    else
        out.temp_dir = "/tmp";

    out.abort_on_populate_failure = params.abort_on_populate_failure;
    return out;
}

} // namespace

std::size_t parse_size(const std::string& text) {
    if (text.empty()) throw ConfigError("empty size");
    std::size_t pos = 0;
    unsigned long long value = 0;
    try {
        value = std::stoull(text, &pos, 10);
    } catch (const std::exception&) {
        throw ConfigError("bad size '" + text + "'");
    }
    std::size_t shift = 0;
    if (pos < text.size()) {
        switch (std::toupper(static_cast<unsigned char>(text[pos]))) {
        case 'K': shift = 10; break;
        case 'M': shift = 20; break;
        case 'G': shift = 30; break;
        default: throw ConfigError("bad size suffix in '" + text + "'");
        }
        ++pos;
        // tolerate a trailing B/iB spelling
        if (pos < text.size() && (text[pos] == 'i' || text[pos] == 'I')) ++pos;
        if (pos < text.size() && (text[pos] == 'b' || text[pos] == 'B')) ++pos;
    }
    if (pos != text.size()) throw ConfigError("bad size '" + text + "'");
    if (shift != 0 && value > (~0ull >> shift)) throw ConfigError("size '" + text + "' overflows");
    return static_cast<std::size_t>(value << shift);
}

Core::Core(const CoreParams& params) {
    bool expected = false;
    if (!g_core_live.compare_exchange_strong(expected, true))
        throw StateError("a core instance is already live in this process");
    try {
        engine_ = std::make_unique<Engine>(resolve(params));
    } catch (...) {
        g_core_live.store(false);
        throw;
    }
    log_info("core up: high=%zu low=%zu chunk=%zu backend=%s", engine_->marks().high,
             engine_->marks().low, engine_->chunk_size(),
             engine_->backend_kind() == BackendKind::userfault ? "userfault" : "trap");
}

Core::~Core() {
    if (engine_) shutdown();
}

void Core::shutdown() {
    if (!engine_) return;
    engine_->shutdown();
    engine_.reset();
    g_core_live.store(false);
}

Engine& Core::engine() const {
    if (!engine_) throw StateError("core is shut down");
    return *engine_;
}

UfoHandle Core::create(const UfoConfig& config) {
    Engine::Created created = engine().create_object(config);
    UfoHandle h;
    h.engine_ = engine_.get();
    h.id_ = created.id;
    h.base_ = created.base;
    h.layout_ = created.layout;
    h.shared_ = std::move(created.shared);
    h.header_size_ = config.header_size;
    h.element_size_ = config.element_size;
    h.element_count_ = config.element_count;
    h.read_only_ = config.read_only;
    return h;
}

void Core::free(UfoHandle& handle) {
    if (!handle.valid()) throw StateError("free of an invalid handle");
    engine().free_object(handle.id_);
    handle.engine_ = nullptr;
    handle.base_ = 0;
}

namespace {

void check_element(const UfoHandle& handle, std::uint64_t index) {
    if (!handle.valid()) throw StateError("access through an invalid handle");
    if (index >= handle.element_count()) throw RangeError("element index out of range");
}

// Poison lands while the faulting access is blocked, so look again after the
// copy: a first touch that failed to populate must not hand back silent zeros.
void check_poison(const UfoHandle& handle) {
    if (handle.status() == ObjectStatus::poisoned)
        throw PoisonedError("object is poisoned: " + handle.poison_reason());
}

} // namespace

void Core::read(const UfoHandle& handle, std::uint64_t index, void* out) const {
    check_element(handle, index);
    check_poison(handle);
    const auto* src = static_cast<const std::byte*>(handle.data()) +
                      index * handle.element_size();
    std::memcpy(out, src, handle.element_size());
    check_poison(handle);
}

bool Core::write(const UfoHandle& handle, std::uint64_t index, const void* bytes) const {
    check_element(handle, index);
    check_poison(handle);
    auto* dst = static_cast<std::byte*>(handle.data()) + index * handle.element_size();
    std::memcpy(dst, bytes, handle.element_size());
    check_poison(handle);
    return !handle.read_only(); // read-only writes land but revert on eviction
}

void Core::read_range(const UfoHandle& handle, std::uint64_t elem_lo, std::uint64_t elem_hi,
                      void* out) const {
    if (!handle.valid()) throw StateError("access through an invalid handle");
    engine().read_range(handle.id_, elem_lo, elem_hi, out);
}

void Core::evict_all() { engine().evict_all(); }

CoreStats Core::stats() const { return engine().stats(); }

ObjectStats Core::object_stats(const UfoHandle& handle) const {
    if (!handle.shared_) throw StateError("stats of an empty handle");
    return engine().object_stats(handle.id_);
}

BackendKind Core::backend_kind() const { return engine().backend_kind(); }
std::size_t Core::chunk_size() const { return engine().chunk_size(); }
std::size_t Core::high_water() const { return engine().marks().high; }
std::size_t Core::low_water() const { return engine().marks().low; }

} // namespace ufo
