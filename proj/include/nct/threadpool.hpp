#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace nct {

// Small shared pool for op-internal data parallelism. Work is split into
// fixed-size chunks whose results never depend on which worker runs them, so
// outputs are identical for any pool size.
class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool(default_threads());
        return pool;
    }

    static int default_threads() {
        unsigned n = std::thread::hardware_concurrency();
        return n == 0 ? 1 : static_cast<int>(n);
    }

    explicit ThreadPool(int n_threads) : stop_(false) {
        for (int i = 1; i < n_threads; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    // fn(chunk_begin, chunk_end); chunks are [k*grain, min(n,(k+1)*grain)).
    void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        if (grain < 1) grain = 1;
        int64_t n_chunks = (n + grain - 1) / grain;
        if (n_chunks == 1 || workers_.empty()) {
            fn(0, n);
            return;
        }
        // Shared job state outlives the call via the worker-held shared_ptr,
        // so a late-waking worker never touches a dead frame.
        auto job = std::make_shared<Job>();
        job->n = n;
        job->grain = grain;
        job->n_chunks = n_chunks;
        job->fn = fn;
        {
            std::lock_guard<std::mutex> lk(mu_);
            current_ = job;
            ++job_gen_;
        }
        cv_.notify_all();
        run(*job);
        std::unique_lock<std::mutex> lk(job->done_mu);
        job->done_cv.wait(lk, [&] { return job->done.load() == job->n_chunks; });
    }

  private:
    struct Job {
        int64_t n = 0, grain = 1, n_chunks = 0;
        std::function<void(int64_t, int64_t)> fn;
        std::atomic<int64_t> next{0};
        std::atomic<int64_t> done{0};
        std::mutex done_mu;
        std::condition_variable done_cv;
    };

    static void run(Job& job) {
        int64_t k;
        while ((k = job.next.fetch_add(1)) < job.n_chunks) {
            int64_t b = k * job.grain;
            int64_t e = std::min(job.n, b + job.grain);
            job.fn(b, e);
            if (job.done.fetch_add(1) + 1 == job.n_chunks) {
                std::lock_guard<std::mutex> lk(job.done_mu);
                job.done_cv.notify_all();
            }
        }
    }

    void worker_loop() {
        uint64_t seen = 0;
        while (true) {
            std::shared_ptr<Job> job;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || job_gen_ != seen; });
                if (stop_) return;
                seen = job_gen_;
                job = current_;
            }
            if (job) run(*job);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::shared_ptr<Job> current_;
    uint64_t job_gen_ = 0;
    bool stop_;
};

inline void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
    ThreadPool::instance().parallel_for(n, grain, fn);
}

}  // namespace nct
