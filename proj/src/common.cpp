#include "djsr/common.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__linux__)
#include <pthread.h>
#include <sched.h>
#endif

namespace djsr {

namespace {

int resolve_max_threads() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("DJSR_THREADS")) {
        char* end = nullptr;
        long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 1) hw = std::min(hw, static_cast<int>(cap));
    }
    return hw;
}

#if defined(__linux__)
void pin_to_cpu(int cpu) {
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(static_cast<size_t>(cpu) % CPU_SETSIZE, &set);
    pthread_setaffinity_np(pthread_self(), sizeof(set), &set);
}
#else
void pin_to_cpu(int) {}
#endif

// Persistent pool: workers park on a condition variable between jobs.
// Worker 0 is the calling thread, pinned lazily on first use.
class Pool {
  public:
    Pool() : nthreads_(resolve_max_threads()) {
        const bool pin = nthreads_ == static_cast<int>(std::thread::hardware_concurrency());
        if (pin) pin_to_cpu(0);
        for (int w = 1; w < nthreads_; ++w)
            workers_.emplace_back([this, w, pin] {
                if (pin) pin_to_cpu(w);
                worker_loop(w);
            });
    }

    ~Pool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_start_.notify_all();
        for (auto& t : workers_) t.join();
    }

    int size() const { return nthreads_; }

    void run(int64_t n, const std::function<void(int64_t, int64_t, int)>& fn) {
        if (n <= 0) return;
        int active = static_cast<int>(std::min<int64_t>(nthreads_, n));
        if (active == 1) {
            fn(0, n, 0);
            return;
        }
        std::unique_lock<std::mutex> lock(mu_);
        job_ = &fn;
        job_n_ = n;
        job_active_ = active;
        pending_ = active - 1;
        ++generation_;
        lock.unlock();
        cv_start_.notify_all();

        run_chunk(0);

        lock.lock();
        cv_done_.wait(lock, [this] { return pending_ == 0; });
        job_ = nullptr;
    }

  private:
    void run_chunk(int worker) {
        int64_t per = (job_n_ + job_active_ - 1) / job_active_;
        int64_t lo = worker * per;
        int64_t hi = std::min<int64_t>(job_n_, lo + per);
        if (lo < hi) (*job_)(lo, hi, worker);
    }

    void worker_loop(int worker) {
        uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lock(mu_);
            cv_start_.wait(lock, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            bool participate = worker < job_active_;
            lock.unlock();
            if (!participate) continue;
            run_chunk(worker);
            lock.lock();
            if (--pending_ == 0) cv_done_.notify_one();
        }
    }

    int nthreads_;
    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_start_, cv_done_;
    const std::function<void(int64_t, int64_t, int)>* job_ = nullptr;
    int64_t job_n_ = 0;
    int job_active_ = 0;
    int pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

Pool& pool() {
    static Pool p;
    return p;
}

}  // namespace

int max_threads() {
    return pool().size();
}

void parallel_chunks(int64_t n, const std::function<void(int64_t, int64_t, int)>& fn) {
    pool().run(n, fn);
}

std::vector<float>& worker_scratch(int worker) {
    static std::vector<std::vector<float>> scratch(static_cast<size_t>(pool().size()));
    return scratch.at(static_cast<size_t>(worker));
}

}  // namespace djsr
