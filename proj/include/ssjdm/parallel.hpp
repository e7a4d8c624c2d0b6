#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace ssjdm {

/// Worker count from SSJDM_THREADS, else hardware concurrency.
inline std::size_t thread_count()
{
  static std::size_t const n = [] {
    if (char const *env = std::getenv("SSJDM_THREADS")) {
      long const v = std::strtol(env, nullptr, 10);
      if (v >= 1) { return std::size_t(v); }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }();
  return n;
}

namespace detail {

class Pool
{
public:
  explicit Pool(std::size_t workers)
  {
    for (std::size_t i = 0; i < workers; ++i) {
      threads_.emplace_back([this, i] { loop(i + 1); });
    }
  }
  ~Pool()
  {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto &t : threads_) { t.join(); }
  }

  std::size_t size() const { return threads_.size() + 1; }

  // Runs job(part) for part in [0, size()); the caller executes part 0.
  void run(std::function<void(std::size_t)> const &job)
  {
    {
      std::lock_guard lk(mu_);
      job_ = &job;
      pending_ = threads_.size();
      ++generation_;
    }
    cv_.notify_all();
    job(0);
    std::unique_lock lk(mu_);
    done_.wait(lk, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

private:
  void loop(std::size_t part)
  {
    std::size_t seen = 0;
    for (;;) {
      std::function<void(std::size_t)> const *job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) { return; }
        seen = generation_;
        job = job_;
      }
      (*job)(part);
      {
        std::lock_guard lk(mu_);
        --pending_;
      }
      done_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_;
  std::function<void(std::size_t)> const *job_ = nullptr;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
};

inline thread_local bool in_parallel = false;

inline Pool &pool()
{
  static Pool p(thread_count() - 1);
  return p;
}

} // namespace detail

/// fn(i) for i in [0, n). Each index is handled by exactly one worker over a
/// fixed contiguous chunk, so results never depend on scheduling as long as
/// fn(i) writes only to slots owned by i.
template <typename F>
void parallel_for(std::size_t n, F &&fn)
{
  std::size_t const workers = thread_count();
  if (workers <= 1 || n < 2 || detail::in_parallel) {
    for (std::size_t i = 0; i < n; ++i) { fn(i); }
    return;
  }
  auto &p = detail::pool();
  std::size_t const parts = p.size();
  std::function<void(std::size_t)> job = [&](std::size_t part) {
    std::size_t const lo = n * part / parts, hi = n * (part + 1) / parts;
    detail::in_parallel = true;
    for (std::size_t i = lo; i < hi; ++i) { fn(i); }
    detail::in_parallel = false;
  };
  p.run(job);
}

} // namespace ssjdm
