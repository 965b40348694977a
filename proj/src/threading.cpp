#include "layertime/threading.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <string>

namespace layertime {

WorkerPool::WorkerPool(int workers) : workers_(workers < 1 ? 1 : workers) {
    for (int id = 1; id < workers_; ++id)
        threads_.emplace_back([this, id] { worker_loop(id); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard<std::mutex> lock(mutex_);
        stop_ = true;
    }
    start_cv_.notify_all();
    for (auto& t : threads_) t.join();
}

int WorkerPool::workers_from_env() {
    const char* env = std::getenv("LAYERTIME_THREADS");
    if (!env) return 1;
    try {
        int n = std::stoi(env);
        return n < 1 ? 1 : n;
    } catch (...) {
        return 1;
    }
}

void WorkerPool::record_error(std::exception_ptr e) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (!error_) error_ = e;
}

void WorkerPool::parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (workers_ == 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }

    {
        std::unique_lock<std::mutex> lock(mutex_);
        job_ = &fn;
        job_n_ = n;
        pending_ = workers_ - 1;
        error_ = nullptr;
        ++generation_;
    }
    start_cv_.notify_all();

    // The calling thread takes chunk 0. An exception here must still wait
    // for the workers, who hold a pointer to fn.
    const int chunk = (n + workers_ - 1) / workers_;
    try {
        for (int i = 0; i < chunk && i < n; ++i) fn(i);
    } catch (...) {
        record_error(std::current_exception());
    }

    std::exception_ptr error;
    {
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [this] { return pending_ == 0; });
        job_ = nullptr;
        error = error_;
        error_ = nullptr;
    }
    if (error) std::rethrow_exception(error);
}

void WorkerPool::worker_loop(int id) {
    std::uint64_t seen = 0;
    for (;;) {
        const std::function<void(int)>* job = nullptr;
        int n = 0;
        {
            std::unique_lock<std::mutex> lock(mutex_);
            start_cv_.wait(lock, [this, seen] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            job = job_;
            n = job_n_;
        }
        const int chunk = (n + workers_ - 1) / workers_;
        const int lo = id * chunk;
        const int hi = std::min(n, lo + chunk);
        try {
            for (int i = lo; i < hi; ++i) (*job)(i);
        } catch (...) {
            record_error(std::current_exception());
        }
        {
            std::lock_guard<std::mutex> lock(mutex_);
            --pending_;
        }
        done_cv_.notify_one();
    }
}

} // namespace layertime
