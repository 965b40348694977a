/// Shared-memory worker pool for the layer-parallel sweeps. Tasks write to
/// disjoint slices and all reductions happen in the caller in fixed index
/// order, so results are bit-identical for any worker count.

#ifndef LAYERTIME_THREADING_HPP
#define LAYERTIME_THREADING_HPP

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace layertime {

class WorkerPool {
public:
    /// workers <= 1 runs everything inline on the calling thread.
    explicit WorkerPool(int workers = 1);
    ~WorkerPool();

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    int workers() const { return workers_; }

    /// Calls fn(i) for i in [0, n). Blocks until all indices are done.
    /// fn must not touch state shared with another index. The first
    /// exception thrown by any index is rethrown on the calling thread.
    void parallel_for(int n, const std::function<void(int)>& fn);

    /// Worker count from the LAYERTIME_THREADS environment variable
    /// (defaults to 1 when unset or unparsable).
    static int workers_from_env();

private:
    void worker_loop(int id);
    void record_error(std::exception_ptr e);

    int workers_ = 1;
    std::vector<std::thread> threads_;

    std::mutex mutex_;
    std::condition_variable start_cv_;
    std::condition_variable done_cv_;
    const std::function<void(int)>* job_ = nullptr;
    int job_n_ = 0;
    std::uint64_t generation_ = 0;
    int pending_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

} // namespace layertime

#endif // LAYERTIME_THREADING_HPP
