#include "ufo/fault_backend.hpp"

#include "ufo/errors.hpp"
#include "log.hpp"

#include <atomic>
#include <cerrno>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <linux/userfaultfd.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/ioctl.h>
#include <sys/mman.h>
#include <sys/syscall.h>
#include <unistd.h>

namespace ufo {

namespace {

int sys_userfaultfd(int flags) {
    return static_cast<int>(::syscall(__NR_userfaultfd, flags));
}

pid_t sys_gettid() {
    return static_cast<pid_t>(::syscall(__NR_gettid));
}

// Faults raised by the service thread itself while a populate callback runs.
// `nested` holds faulting addresses, `zeroed` the pages that were zero-filled
// to let the callback finish; those pages go back to the missing state when
// the guard exits.
struct GuardLevel {
    std::vector<std::uintptr_t> nested;
    std::vector<std::uintptr_t> zeroed;
};

class UserfaultBackend final : public FaultBackend {
public:
    UserfaultBackend() {
        uffd_ = sys_userfaultfd(O_CLOEXEC | O_NONBLOCK);
        if (uffd_ < 0) throw SystemError("userfaultfd", errno);

        uffdio_api api{};
        api.api = UFFD_API;
        api.features = UFFD_FEATURE_THREAD_ID;
        if (::ioctl(uffd_, UFFDIO_API, &api) == -1) {
            int err = errno;
            ::close(uffd_);
            throw SystemError("UFFDIO_API", err);
        }
        if (!(api.features & UFFD_FEATURE_THREAD_ID)) {
            ::close(uffd_);
            throw ConfigError("kernel lacks userfaultfd thread-id events");
        }

        shutdown_efd_ = ::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
        helper_stop_efd_ = ::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
        if (shutdown_efd_ < 0 || helper_stop_efd_ < 0) {
            int err = errno;
            if (shutdown_efd_ >= 0) ::close(shutdown_efd_);
            if (helper_stop_efd_ >= 0) ::close(helper_stop_efd_);
            ::close(uffd_);
            throw SystemError("eventfd", err);
        }
    }

    ~UserfaultBackend() override {
        if (helper_.joinable()) {
            signal_efd(helper_stop_efd_);
            helper_.join();
        }
        ::close(helper_stop_efd_);
        ::close(shutdown_efd_);
        ::close(uffd_);
    }

    BackendKind kind() const override { return BackendKind::userfault; }

    Region reserve(std::size_t length) override {
        const std::size_t ps = page_size();
        if (length == 0 || length % ps != 0)
            throw ConfigError("region length must be a positive page multiple");
        void* p = ::mmap(nullptr, length, PROT_READ | PROT_WRITE,
                         MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0);
        if (p == MAP_FAILED) throw SystemError("mmap", errno);

        uffdio_register reg{};
        reg.range.start = reinterpret_cast<std::uintptr_t>(p);
        reg.range.len = length;
        reg.mode = UFFDIO_REGISTER_MODE_MISSING;
        if (::ioctl(uffd_, UFFDIO_REGISTER, &reg) == -1) {
            int err = errno;
            ::munmap(p, length);
            throw SystemError("UFFDIO_REGISTER", err);
        }
        return Region{reinterpret_cast<std::uintptr_t>(p), length, true};
    }

    void release(Region& region) override {
        if (!region.base || !region.registered)
            throw StateError("release of an inactive region");
        uffdio_range r{};
        r.start = region.base;
        r.len = region.length;
        ::ioctl(uffd_, UFFDIO_UNREGISTER, &r);

        // Faults already answered for this region can still be queued (in
        // the kernel or parked during a guard). Purge them before the range
        // can be recycled for an unrelated object.
        {
            std::lock_guard lk(pending_mx_);
            uffd_msg msg{};
            while (::read(uffd_, &msg, sizeof msg) == static_cast<ssize_t>(sizeof msg)) {
                if (msg.event != UFFD_EVENT_PAGEFAULT) continue;
                pending_.push_back(translate(msg));
            }
            const std::uintptr_t lo = region.base;
            const std::uintptr_t hi = region.base + region.length;
            std::erase_if(pending_, [lo, hi](const FaultEvent& ev) {
                return ev.address >= lo && ev.address < hi;
            });
        }
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

        std::uintptr_t dst = region.base + byte_lo;
        const std::byte* src = bytes.data();
        std::size_t remaining = bytes.size();
        while (remaining > 0) {
            uffdio_copy copy{};
            copy.dst = dst;
            copy.src = reinterpret_cast<std::uintptr_t>(src);
            copy.len = remaining;
            if (::ioctl(uffd_, UFFDIO_COPY, &copy) != -1) return;
            if (errno == EAGAIN) {
                // Partial progress; copy holds the bytes placed so far.
                std::size_t done = copy.copy > 0 ? static_cast<std::size_t>(copy.copy) : 0;
                dst += done;
                src += done;
                remaining -= done;
                continue;
            }
            if (errno == EEXIST) {
                // Leading page already resident: keep its contents.
                dst += ps;
                src += ps;
                remaining -= ps;
                continue;
            }
            throw SystemError("UFFDIO_COPY", errno);
        }
    }

    void reclaim(const Region& region, std::size_t byte_lo, std::size_t length) override {
        if (length == 0) return;
        const std::size_t ps = page_size();
        if (byte_lo % ps != 0 || length % ps != 0)
            throw ConfigError("reclaim range must be page aligned");
        if (byte_lo + length > region.length)
            throw RangeError("reclaim past end of region");
        // Registration survives; the next touch raises a fresh missing fault.
        if (::madvise(reinterpret_cast<void*>(region.base + byte_lo), length,
                      MADV_DONTNEED) != 0)
            throw SystemError("madvise(MADV_DONTNEED)", errno);
    }

    Event next_event(int timeout_ms) override {
        {
            std::lock_guard lk(pending_mx_);
            if (!pending_.empty()) {
                Event ev{Event::Kind::fault, pending_.front()};
                pending_.pop_front();
                return ev;
            }
        }
        if (shutdown_.load(std::memory_order_acquire)) return Event{Event::Kind::closed, {}};

        pollfd fds[2] = {{uffd_, POLLIN, 0}, {shutdown_efd_, POLLIN, 0}};
        for (;;) {
            int n = ::poll(fds, 2, timeout_ms);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw SystemError("poll", errno);
            }
            if (n == 0) return Event{Event::Kind::timeout, {}};
            if (fds[1].revents != 0) return Event{Event::Kind::closed, {}};

            uffd_msg msg{};
            ssize_t r = ::read(uffd_, &msg, sizeof msg);
            if (r < 0) {
                if (errno == EAGAIN || errno == EINTR) continue;
                throw SystemError("read(userfaultfd)", errno);
            }
            if (r == 0) return Event{Event::Kind::closed, {}};
            if (r != static_cast<ssize_t>(sizeof msg))
                throw StateError("short userfaultfd read");
            if (msg.event != UFFD_EVENT_PAGEFAULT) continue;
            return Event{Event::Kind::fault, translate(msg)};
        }
    }

    int poll_fd() const override { return uffd_; }

    bool has_pending() const override {
        std::lock_guard lk(pending_mx_);
        return !pending_.empty();
    }

    void shutdown() override {
        shutdown_.store(true, std::memory_order_release);
        signal_efd(shutdown_efd_);
    }

    int run_guarded(const std::function<int()>& populate,
                    std::vector<std::uintptr_t>& nested) override {
        GuardLevel level;
        bool outermost = false;
        {
            std::lock_guard lk(guard_mx_);
            if (guard_stack_.empty()) {
                outermost = true;
                service_tid_ = sys_gettid();
            }
            guard_stack_.push_back(&level);
        }
        if (outermost) helper_ = std::thread([this] { helper_main(); });

        int rc;
        try {
            rc = populate();
        } catch (...) {
            finish_guard(level, outermost);
            throw;
        }
        bool had_nested = finish_guard(level, outermost);
        for (std::uintptr_t n : level.nested) nested.push_back(n);
        return had_nested ? populate_nested_access : rc;
    }

private:
    // Pops the guard level, stops the helper at the outermost exit, and puts
    // every zero-filled page back into the missing state. By the time the
    // populate callback has returned, all of its own faults are resolved, so
    // the level's vectors are stable.
    bool finish_guard(GuardLevel& level, bool outermost) {
        {
            std::lock_guard lk(guard_mx_);
            guard_stack_.pop_back();
        }
        if (outermost) {
            signal_efd(helper_stop_efd_);
            helper_.join();
            drain_efd(helper_stop_efd_);
        }
        const std::size_t ps = page_size();
        for (std::uintptr_t page : level.zeroed)
            ::madvise(reinterpret_cast<void*>(page), ps, MADV_DONTNEED);
        return !level.nested.empty();
    }

    // Reads fault events while a populate callback runs on the service
    // thread. The service thread's own faults get a zero page so the callback
    // can finish; everyone else's events are parked for the main loop.
    void helper_main() {
        const std::size_t ps = page_size();
        for (;;) {
            pollfd fds[2] = {{uffd_, POLLIN, 0}, {helper_stop_efd_, POLLIN, 0}};
            int n = ::poll(fds, 2, -1);
            if (n < 0) {
                if (errno == EINTR) continue;
                return;
            }
            bool stopping = fds[1].revents != 0;
            for (;;) {
                uffd_msg msg{};
                ssize_t r = ::read(uffd_, &msg, sizeof msg);
                if (r != static_cast<ssize_t>(sizeof msg)) break;
                if (msg.event != UFFD_EVENT_PAGEFAULT) continue;
                auto addr = static_cast<std::uintptr_t>(msg.arg.pagefault.address);
                auto ptid = static_cast<pid_t>(msg.arg.pagefault.feat.ptid);
                if (ptid == service_tid_) {
                    std::uintptr_t page = addr & ~(ps - 1);
                    {
                        std::lock_guard lk(guard_mx_);
                        if (!guard_stack_.empty()) {
                            guard_stack_.back()->nested.push_back(addr);
                            guard_stack_.back()->zeroed.push_back(page);
                        }
                    }
                    zero_fill_and_wake(page, ps);
                } else {
                    std::lock_guard lk(pending_mx_);
                    pending_.push_back(translate(msg));
                }
            }
            if (stopping) return;
        }
    }

    // Unblocks the service thread with a page of zeros. The callback then
    // reads zeros, which is fine: a recorded nested access fails the whole
    // populate and the result never becomes visible data.
    void zero_fill_and_wake(std::uintptr_t page, std::size_t len) {
        for (;;) {
            uffdio_zeropage zp{};
            zp.range.start = page;
            zp.range.len = len;
            if (::ioctl(uffd_, UFFDIO_ZEROPAGE, &zp) != -1) return;
            if (errno == EAGAIN) continue;
            if (errno == EEXIST) {
                uffdio_range r{};
                r.start = page;
                r.len = len;
                ::ioctl(uffd_, UFFDIO_WAKE, &r);
            }
            return;
        }
    }

    static FaultEvent translate(const uffd_msg& msg) {
        FaultEvent ev;
        ev.address = static_cast<std::uintptr_t>(msg.arg.pagefault.address);
        ev.kind = (msg.arg.pagefault.flags & UFFD_PAGEFAULT_FLAG_WRITE)
                      ? AccessKind::write
                      : AccessKind::read;
        return ev;
    }

    static void signal_efd(int fd) {
        std::uint64_t one = 1;
        [[maybe_unused]] ssize_t r = ::write(fd, &one, sizeof one);
    }

    static void drain_efd(int fd) {
        std::uint64_t v;
        while (::read(fd, &v, sizeof v) > 0) {
        }
    }

    int uffd_ = -1;
    int shutdown_efd_ = -1;
    int helper_stop_efd_ = -1;
    std::atomic<bool> shutdown_{false};

    mutable std::mutex pending_mx_;
    std::deque<FaultEvent> pending_;

    std::mutex guard_mx_;
    std::vector<GuardLevel*> guard_stack_;
    pid_t service_tid_ = 0;
    std::thread helper_;
};

} // namespace

bool userfault_available() {
    static const bool ok = [] {
        int fd = sys_userfaultfd(O_CLOEXEC | O_NONBLOCK);
        if (fd < 0) return false;
        uffdio_api api{};
        api.api = UFFD_API;
        api.features = UFFD_FEATURE_THREAD_ID;
        bool good = ::ioctl(fd, UFFDIO_API, &api) == 0 &&
                    (api.features & UFFD_FEATURE_THREAD_ID) != 0;
        ::close(fd);
        return good;
    }();
    return ok;
}

std::unique_ptr<FaultBackend> make_userfault_backend() {
    return std::make_unique<UserfaultBackend>();
}

} // namespace ufo
