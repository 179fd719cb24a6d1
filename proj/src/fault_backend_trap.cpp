#include "ufo/fault_backend.hpp"

#include "ufo/errors.hpp"
#include "log.hpp"

#include <atomic>
#include <cerrno>
#include <climits>
#include <csignal>
#include <cstring>
#include <deque>
#include <mutex>
#include <vector>

#include <fcntl.h>
#include <linux/futex.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/mman.h>
#include <sys/syscall.h>
#include <ucontext.h>
#include <unistd.h>

namespace ufo {

namespace {

// State shared with the SIGSEGV handler. The handler may only touch
// lock-free data and raw syscalls, so regions live in a fixed table of
// atomics: writers serialize on g_slots_mx and publish by storing base last;
// the handler scans base-first with acquire loads.
struct RegionSlot {
    std::atomic<std::uintptr_t> base{0};
    std::atomic<std::uintptr_t> end{0};
    std::atomic<int> event_wfd{-1};
};

constexpr int k_max_regions = 1024;
RegionSlot g_slots[k_max_regions];
std::mutex g_slots_mx;

std::size_t g_handler_page_size = 4096;
struct sigaction g_prev_segv;
std::mutex g_handler_mx;

// Bumped after every install; faulting threads futex-wait on it and retry
// their access after each bump until their page has arrived.
std::atomic<std::uint32_t> g_install_gen{0};

// Nested accesses recorded by the handler while the service thread runs a
// populate callback. Fixed storage: no allocation in signal context. Kept
// small: initial-exec TLS draws from the loader's static reserve, which is
// scarce when this library is dlopened (e.g. as a python module).
constexpr int k_max_nested = 16;
thread_local bool tl_guard_active [[gnu::tls_model("initial-exec")]] = false;
thread_local int tl_nested_count [[gnu::tls_model("initial-exec")]] = 0;
thread_local std::uintptr_t tl_nested[k_max_nested] [[gnu::tls_model("initial-exec")]];

struct WireEvent {
    std::uint64_t addr;
    std::uint8_t kind; // AccessKind
    std::uint8_t pad[7];
};
static_assert(sizeof(WireEvent) == 16);

void futex_wait(std::atomic<std::uint32_t>* var, std::uint32_t expected) {
    ::syscall(SYS_futex, reinterpret_cast<std::uint32_t*>(var), FUTEX_WAIT_PRIVATE,
              expected, nullptr, nullptr, 0);
}

void futex_wake_all(std::atomic<std::uint32_t>* var) {
    ::syscall(SYS_futex, reinterpret_cast<std::uint32_t*>(var), FUTEX_WAKE_PRIVATE,
              INT_MAX, nullptr, nullptr, 0);
}

void write_full(int fd, const void* buf, std::size_t len) {
    const char* p = static_cast<const char*>(buf);
    while (len > 0) {
        ssize_t r = ::write(fd, p, len);
        if (r < 0) {
            if (errno == EINTR) continue;
            return; // pipe gone: the engine has shut down under us
        }
        p += r;
        len -= static_cast<std::size_t>(r);
    }
}

AccessKind fault_kind(void* ucontext) {
#if defined(__x86_64__)
    auto* uc = static_cast<ucontext_t*>(ucontext);
    return (uc->uc_mcontext.gregs[REG_ERR] & 0x2) ? AccessKind::write : AccessKind::read;
#else
    (void)ucontext;
    return AccessKind::unknown;
#endif
}

void chain_previous(int sig, siginfo_t* si, void* uc) {
    if ((g_prev_segv.sa_flags & SA_SIGINFO) != 0 && g_prev_segv.sa_sigaction != nullptr) {
        g_prev_segv.sa_sigaction(sig, si, uc);
        return;
    }
    if (g_prev_segv.sa_handler == SIG_IGN) return;
    if (g_prev_segv.sa_handler != SIG_DFL && g_prev_segv.sa_handler != nullptr) {
        g_prev_segv.sa_handler(sig);
        return;
    }
    // Not ours and no one else wants it: restore the default action and let
    // the retried instruction terminate the process normally.
    ::signal(SIGSEGV, SIG_DFL);
}

void segv_handler(int sig, siginfo_t* si, void* ucontext) {
    const auto addr = reinterpret_cast<std::uintptr_t>(si->si_addr);
    int wfd = -1;
    bool ours = false;
    for (const RegionSlot& slot : g_slots) {
        std::uintptr_t base = slot.base.load(std::memory_order_acquire);
        if (base == 0) continue;
        std::uintptr_t end = slot.end.load(std::memory_order_acquire);
        if (addr >= base && addr < end) {
            ours = true;
            wfd = slot.event_wfd.load(std::memory_order_acquire);
            break;
        }
    }
    if (!ours) {
        chain_previous(sig, si, ucontext);
        return;
    }

    const std::uintptr_t page = addr & ~(g_handler_page_size - 1);
    if (tl_guard_active) {
        // The service thread touched unmaterialized memory inside a populate
        // callback. Hand it a page of zeros so the callback can finish; the
        // guard fails the populate and unmaps the page afterwards.
        if (tl_nested_count < k_max_nested) tl_nested[tl_nested_count] = addr;
        ++tl_nested_count;
        void* p = ::mmap(reinterpret_cast<void*>(page), g_handler_page_size,
                         PROT_READ | PROT_WRITE,
                         MAP_PRIVATE | MAP_ANONYMOUS | MAP_FIXED, -1, 0);
        if (p == MAP_FAILED) __builtin_trap();
        return;
    }

    // Application thread: announce the access, sleep until some install
    // happens, then retry the instruction. If our page is still missing we
    // fault again and go around once more.
    std::uint32_t gen = g_install_gen.load(std::memory_order_acquire);
    WireEvent ev{};
    ev.addr = addr;
    ev.kind = static_cast<std::uint8_t>(fault_kind(ucontext));
    write_full(wfd, &ev, sizeof ev);
    futex_wait(&g_install_gen, gen);
}

// (Re)installs the fault handler. Checked at every backend construction:
// test harnesses and crash reporters swap the SIGSEGV disposition around, so
// once-per-process is not enough.
void ensure_handler() {
    std::lock_guard lk(g_handler_mx);
    struct sigaction cur{};
    if (::sigaction(SIGSEGV, nullptr, &cur) == 0 &&
        (cur.sa_flags & SA_SIGINFO) != 0 && cur.sa_sigaction == segv_handler)
        return;
    long ps = ::sysconf(_SC_PAGESIZE);
    if (ps > 0) g_handler_page_size = static_cast<std::size_t>(ps);
    struct sigaction sa{};
    sa.sa_flags = SA_SIGINFO;
    sa.sa_sigaction = segv_handler;
    sigemptyset(&sa.sa_mask);
    if (::sigaction(SIGSEGV, &sa, &g_prev_segv) != 0)
        throw SystemError("sigaction(SIGSEGV)", errno);
}

class TrapBackend final : public FaultBackend {
public:
    TrapBackend() {
        ensure_handler();
        int fds[2];
        if (::pipe2(fds, O_CLOEXEC) != 0) throw SystemError("pipe2", errno);
        event_rfd_ = fds[0];
        event_wfd_ = fds[1];
        // Read side nonblocking so drains can stop at empty; writers block if
        // the pipe ever fills, which only stalls threads that were about to
        // sleep anyway.
        ::fcntl(event_rfd_, F_SETFL, O_NONBLOCK);

        shutdown_efd_ = ::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
        if (shutdown_efd_ < 0) {
            int err = errno;
            ::close(event_rfd_);
            ::close(event_wfd_);
            throw SystemError("eventfd", err);
        }
    }

    ~TrapBackend() override {
        ::close(shutdown_efd_);
        ::close(event_wfd_);
        ::close(event_rfd_);
    }

    BackendKind kind() const override { return BackendKind::trap; }

    Region reserve(std::size_t length) override {
        const std::size_t ps = page_size();
        if (length == 0 || length % ps != 0)
            throw ConfigError("region length must be a positive page multiple");
        void* p = ::mmap(nullptr, length, PROT_NONE,
                         MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0);
        if (p == MAP_FAILED) throw SystemError("mmap", errno);

        std::lock_guard lk(g_slots_mx);
        for (RegionSlot& slot : g_slots) {
            if (slot.base.load(std::memory_order_relaxed) != 0) continue;
            slot.event_wfd.store(event_wfd_, std::memory_order_release);
            auto base = reinterpret_cast<std::uintptr_t>(p);
            slot.end.store(base + length, std::memory_order_release);
            slot.base.store(base, std::memory_order_release);
            return Region{base, length, true};
        }
        ::munmap(p, length);
        throw ConfigError("too many live regions for the trap backend");
    }

    void release(Region& region) override {
        if (!region.base || !region.registered)
            throw StateError("release of an inactive region");
        {
            std::lock_guard lk(g_slots_mx);
            for (RegionSlot& slot : g_slots) {
                if (slot.base.load(std::memory_order_relaxed) == region.base) {
                    slot.base.store(0, std::memory_order_release);
                    slot.end.store(0, std::memory_order_release);
                    slot.event_wfd.store(-1, std::memory_order_release);
                    break;
                }
            }
        }
        // Already-answered faults for this region may still sit in the pipe
        // (a waiter woken by an unrelated install re-reports before its own
        // page lands). Purge them so they cannot surface after the address
        // range is recycled.
        fill_pending();
        const std::uintptr_t lo = region.base;
        const std::uintptr_t hi = region.base + region.length;
        std::erase_if(pending_, [lo, hi](const Event& ev) {
            return ev.fault.address >= lo && ev.fault.address < hi;
        });
        ::munmap(reinterpret_cast<void*>(region.base), region.length);
        region = Region{};
    }

    void install(const Region& region, std::size_t byte_lo,
                 std::span<const std::byte> bytes) override {
        if (bytes.empty()) return;
        const std::size_t ps = page_size();
        if (byte_lo % ps != 0 || bytes.size() % ps != 0)
            throw ConfigError("install range must be page aligned");
        if (byte_lo + bytes.size() > region.length)
            throw RangeError("install past end of region");

        // Fill a staging mapping and move it into place: the destination
        // flips from trapping to populated in one step, so a woken waiter can
        // never observe half-written contents.
        void* staging = ::mmap(nullptr, bytes.size(), PROT_READ | PROT_WRITE,
                               MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
        if (staging == MAP_FAILED) throw SystemError("mmap(staging)", errno);
        std::memcpy(staging, bytes.data(), bytes.size());
        void* dst = reinterpret_cast<void*>(region.base + byte_lo);
        void* got = ::mremap(staging, bytes.size(), bytes.size(),
                             MREMAP_MAYMOVE | MREMAP_FIXED, dst);
        if (got == MAP_FAILED) {
            int err = errno;
            ::munmap(staging, bytes.size());
            throw SystemError("mremap", err);
        }
        g_install_gen.fetch_add(1, std::memory_order_release);
        futex_wake_all(&g_install_gen);
    }

    void reclaim(const Region& region, std::size_t byte_lo, std::size_t length) override {
        if (length == 0) return;
        const std::size_t ps = page_size();
        if (byte_lo % ps != 0 || length % ps != 0)
            throw ConfigError("reclaim range must be page aligned");
        if (byte_lo + length > region.length)
            throw RangeError("reclaim past end of region");
        void* dst = reinterpret_cast<void*>(region.base + byte_lo);
        void* got = ::mmap(dst, length, PROT_NONE,
                           MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE | MAP_FIXED, -1, 0);
        if (got == MAP_FAILED) throw SystemError("mmap(reclaim)", errno);
    }

    Event next_event(int timeout_ms) override {
        if (!pending_.empty()) {
            Event ev = pending_.front();
            pending_.pop_front();
            return ev;
        }
        if (shutdown_.load(std::memory_order_acquire)) return Event{Event::Kind::closed, {}};
        pollfd fds[2] = {{event_rfd_, POLLIN, 0}, {shutdown_efd_, POLLIN, 0}};
        for (;;) {
            int n = ::poll(fds, 2, timeout_ms);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw SystemError("poll", errno);
            }
            if (n == 0) return Event{Event::Kind::timeout, {}};
            if (fds[1].revents != 0) return Event{Event::Kind::closed, {}};

            fill_pending();
            if (pending_.empty()) continue;
            Event ev = pending_.front();
            pending_.pop_front();
            return ev;
        }
    }

    bool has_pending() const override { return !pending_.empty(); }

    int poll_fd() const override { return event_rfd_; }

    void shutdown() override {
        shutdown_.store(true, std::memory_order_release);
        std::uint64_t one = 1;
        [[maybe_unused]] ssize_t r = ::write(shutdown_efd_, &one, sizeof one);
    }

    int run_guarded(const std::function<int()>& populate,
                    std::vector<std::uintptr_t>& nested) override {
        const int base = std::min(tl_nested_count, k_max_nested);
        const bool outermost = !tl_guard_active;
        tl_guard_active = true;

        int rc;
        try {
            rc = populate();
        } catch (...) {
            unwind_guard(base, outermost, nested);
            throw;
        }
        bool had_nested = unwind_guard(base, outermost, nested);
        return had_nested ? populate_nested_access : rc;
    }

private:
    // Collects the nested accesses recorded since `base`, puts their pages
    // back into the trapping state, and restores the guard flag.
    static bool unwind_guard(int base, bool outermost, std::vector<std::uintptr_t>& nested) {
        const int count = std::min(tl_nested_count, k_max_nested);
        const bool had = tl_nested_count > base;
        const std::size_t ps = page_size();
        for (int i = base; i < count; ++i) {
            nested.push_back(tl_nested[i]);
            std::uintptr_t page = tl_nested[i] & ~(ps - 1);
            ::mmap(reinterpret_cast<void*>(page), ps, PROT_NONE,
                   MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE | MAP_FIXED, -1, 0);
        }
        tl_nested_count = base;
        if (outermost) tl_guard_active = false;
        return had;
    }

    // Drains every complete record currently in the pipe.
    void fill_pending() {
        WireEvent wire{};
        while (read_wire(wire)) {
            Event ev{Event::Kind::fault, {}};
            ev.fault.address = static_cast<std::uintptr_t>(wire.addr);
            ev.fault.kind = static_cast<AccessKind>(wire.kind);
            pending_.push_back(ev);
        }
    }

    bool read_wire(WireEvent& wire) {
        char* p = reinterpret_cast<char*>(&wire);
        std::size_t need = sizeof wire;
        while (need > 0) {
            ssize_t r = ::read(event_rfd_, p, need);
            if (r < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN && need == sizeof wire) return false;
                if (errno == EAGAIN) continue; // mid-record: finish it
                throw SystemError("read(event pipe)", errno);
            }
            if (r == 0) return false;
            p += r;
            need -= static_cast<std::size_t>(r);
        }
        return true;
    }

    int event_rfd_ = -1;
    int event_wfd_ = -1;
    int shutdown_efd_ = -1;
    std::atomic<bool> shutdown_{false};
    std::deque<Event> pending_; // service-thread private
};

} // namespace

std::unique_ptr<FaultBackend> make_trap_backend() {
    return std::make_unique<TrapBackend>();
}

} // namespace ufo
