#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace emorec {

// Static-partition parallel_for over [0, n). Each worker owns a contiguous
// chunk, so kernels that write only to their own output indices stay
// bit-deterministic regardless of thread count or scheduling.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_threads(std::size_t n) {
        std::lock_guard<std::mutex> lk(api_mutex_);
        stop_workers();
        threads_ = n == 0 ? 1 : n;
        start_workers();
    }

    std::size_t threads() const { return threads_; }

    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
        if (n == 0) return;
        if (in_parallel_region()) { // nested call from a kernel: stay serial
            fn(0, n);
            return;
        }
        std::lock_guard<std::mutex> lk(api_mutex_);
        const std::size_t parts = std::min(threads_, n);
        if (parts <= 1) {
            fn(0, n);
            return;
        }
        const std::size_t chunk = (n + parts - 1) / parts;
        {
            std::unique_lock<std::mutex> lock(mutex_);
            job_ = &fn;
            job_n_ = n;
            job_chunk_ = chunk;
            job_parts_ = parts;
            pending_ = parts - 1; // workers handle parts 1..parts-1
            ++generation_;
        }
        cv_.notify_all();
        in_parallel_region() = true;
        fn(0, std::min(chunk, n)); // part 0 on the calling thread
        in_parallel_region() = false;
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        job_ = nullptr;
    }

private:
    static bool& in_parallel_region() {
        thread_local bool flag = false;
        return flag;
    }

    ThreadPool() {
        threads_ = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        start_workers();
    }
    ~ThreadPool() { stop_workers(); }

    void start_workers() {
        stop_ = false;
        for (std::size_t i = 1; i < threads_; ++i) {
            workers_.emplace_back([this, i] { worker(i); });
        }
    }

    void stop_workers() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
        workers_.clear();
    }

    void worker(std::size_t index) {
        std::size_t seen = 0;
        while (true) {
            const std::function<void(std::size_t, std::size_t)>* job = nullptr;
            std::size_t lo = 0, hi = 0;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                if (!job_ || index >= job_parts_) {
                    continue;
                }
                job = job_;
                lo = index * job_chunk_;
                hi = std::min(lo + job_chunk_, job_n_);
            }
            if (lo < hi) {
                in_parallel_region() = true;
                (*job)(lo, hi);
                in_parallel_region() = false;
            }
            {
                std::unique_lock<std::mutex> lock(mutex_);
                if (pending_ > 0 && --pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex api_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::size_t, std::size_t)>* job_ = nullptr;
    std::size_t job_n_ = 0, job_chunk_ = 0, job_parts_ = 0;
    std::size_t pending_ = 0;
    std::size_t generation_ = 0;
    std::size_t threads_ = 1;
    bool stop_ = false;
};

inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    ThreadPool::instance().run(n, fn);
}

inline void set_num_threads(std::size_t n) { ThreadPool::instance().set_threads(n); }

} // namespace emorec
