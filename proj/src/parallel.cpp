#include "lsirt/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lsirt {
namespace {

int default_thread_count() {
    if (const char* env = std::getenv("LSIRT_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

std::atomic<int> g_threads{0};  // 0 = not yet resolved

// Persistent pool; the calling thread participates, so n threads means
// (n - 1) workers. Every spawned worker passes through every generation
// exactly once (idle ones just decrement the barrier), which keeps the
// done-barrier exact even when the requested thread count changes.
class Pool {
public:
    static Pool& instance() {
        static Pool p;
        return p;
    }

    void run(int threads, std::int64_t chunk, std::int64_t n,
             const std::function<void(std::int64_t, std::int64_t)>& body) {
        std::unique_lock lock(mutex_);
        while (static_cast<int>(workers_.size()) < threads - 1) {
            int id = static_cast<int>(workers_.size());
            workers_.emplace_back([this, id, gen = generation_] { worker_loop(id, gen); });
        }
        body_ = &body;
        chunk_ = chunk;
        total_ = n;
        next_.store(0, std::memory_order_relaxed);
        active_workers_ = threads - 1;
        running_ = static_cast<std::int64_t>(workers_.size()) + 1;
        first_error_ = nullptr;
        ++generation_;
        lock.unlock();
        work_cv_.notify_all();

        work(true);

        lock.lock();
        done_cv_.wait(lock, [&] { return running_ == 0; });
        if (first_error_) std::rethrow_exception(first_error_);
    }

private:
    Pool() = default;

    ~Pool() {
        {
            std::lock_guard lock(mutex_);
            stop_ = true;
        }
        work_cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void worker_loop(int id, std::uint64_t seen) {
        for (;;) {
            bool participate;
            {
                std::unique_lock lock(mutex_);
                work_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                participate = id < active_workers_;
            }
            work(participate);
        }
    }

    void work(bool participate) {
        if (participate) {
            for (;;) {
                std::int64_t i = next_.fetch_add(1, std::memory_order_relaxed);
                std::int64_t begin = i * chunk_;
                if (begin >= total_) break;
                std::int64_t end = std::min(begin + chunk_, total_);
                try {
                    (*body_)(begin, end);
                } catch (...) {
                    std::lock_guard lock(mutex_);
                    if (!first_error_) first_error_ = std::current_exception();
                }
            }
        }
        std::lock_guard lock(mutex_);
        if (--running_ == 0) done_cv_.notify_all();
    }

    std::mutex mutex_;
    std::condition_variable work_cv_, done_cv_;
    std::vector<std::thread> workers_;
    const std::function<void(std::int64_t, std::int64_t)>* body_ = nullptr;
    std::atomic<std::int64_t> next_{0};
    std::int64_t chunk_ = 0, total_ = 0;
    std::int64_t running_ = 0;
    int active_workers_ = 0;
    std::uint64_t generation_ = 0;
    std::exception_ptr first_error_;
    bool stop_ = false;
};

}  // namespace

int thread_count() {
    int t = g_threads.load(std::memory_order_relaxed);
    if (t == 0) {
        t = default_thread_count();
        g_threads.store(t, std::memory_order_relaxed);
    }
    return t;
}

void set_thread_count(int n) {
    g_threads.store(n >= 1 ? n : default_thread_count(), std::memory_order_relaxed);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) return;
    int threads = thread_count();
    // The partition depends only on n, never on the thread count.
    std::int64_t chunk = std::max<std::int64_t>(1, n / 64);
    std::int64_t n_chunks = (n + chunk - 1) / chunk;
    if (threads == 1 || n_chunks == 1) {
        body(0, n);
        return;
    }
    Pool::instance().run(threads, chunk, n, body);
}

}  // namespace lsirt
