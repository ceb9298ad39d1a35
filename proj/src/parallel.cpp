#include "voxseg/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace voxseg::par {
namespace {

int g_max_threads = 0; // 0 = uninitialized, resolve lazily

int hardware_threads() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

// Persistent pool. Workers sleep until a job is posted; the calling thread
// participates, so one job at a time and no nested parallelism.
class Pool {
public:
    Pool() {
        const int n = hardware_threads() - 1;
        workers_.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    void run(std::int64_t n, const std::function<void(std::int64_t)>& fn, int threads) {
        job_n_ = n;
        job_fn_ = &fn;
        next_.store(0, std::memory_order_relaxed);
        chunk_ = std::max<std::int64_t>(1, n / (static_cast<std::int64_t>(threads) * 8));
        const int helpers = std::min<int>(threads - 1, static_cast<int>(workers_.size()));
        pending_.store(helpers, std::memory_order_relaxed);
        if (helpers > 0) {
            {
                std::lock_guard<std::mutex> lk(m_);
                wanted_ = helpers;
                ++epoch_;
            }
            cv_.notify_all();
        }
        work();
        // wait for helpers to drain so job_fn_ stays valid
        while (pending_.load(std::memory_order_acquire) > 0)
            std::this_thread::yield();
        job_fn_ = nullptr;
    }

private:
    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_.wait(lk, [&] { return stop_ || (epoch_ != seen && wanted_ > 0); });
                if (stop_) return;
                seen = epoch_;
                --wanted_;
            }
            work();
            pending_.fetch_sub(1, std::memory_order_release);
        }
    }

    void work() {
        const std::function<void(std::int64_t)>* fn = job_fn_;
        const std::int64_t n = job_n_;
        const std::int64_t chunk = chunk_;
        for (;;) {
            const std::int64_t lo = next_.fetch_add(chunk, std::memory_order_relaxed);
            if (lo >= n) break;
            const std::int64_t hi = std::min(lo + chunk, n);
            for (std::int64_t i = lo; i < hi; ++i) (*fn)(i);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex m_;
    std::condition_variable cv_;
    std::uint64_t epoch_ = 0;
    int wanted_ = 0;
    bool stop_ = false;

    std::atomic<std::int64_t> next_{0};
    std::atomic<int> pending_{0};
    std::int64_t job_n_ = 0;
    std::int64_t chunk_ = 1;
    const std::function<void(std::int64_t)>* job_fn_ = nullptr;
};

Pool& pool() {
    static Pool p;
    return p;
}

} // namespace

void set_max_threads(int n) { g_max_threads = n < 1 ? 1 : n; }

int max_threads() {
    if (g_max_threads == 0) g_max_threads = hardware_threads();
    return g_max_threads;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    if (n <= 0) return;
    const int threads = max_threads();
    if (threads <= 1 || n == 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    pool().run(n, fn, threads);
}

} // namespace voxseg::par
