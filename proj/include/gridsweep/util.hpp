#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>

namespace gridsweep {

// Unix seconds; used for timestamps that cross process boundaries.
inline double wall_now() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Monotonic seconds; used for local deadlines and health arithmetic.
inline double mono_now() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

inline void sleep_sec(double sec) {
  if (sec > 0) {
    std::this_thread::sleep_for(std::chrono::duration<double>(sec));
  }
}

// Unbounded MPSC queue; the single consumer is a node's event loop.
template <typename T>
class Mailbox {
 public:
  void push(T value) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      q_.push_back(std::move(value));
    }
    cv_.notify_one();
  }

  // Waits up to timeout_sec; std::nullopt on timeout or after close() drains.
  std::optional<T> pop(double timeout_sec) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait_for(lock, std::chrono::duration<double>(timeout_sec),
                 [this] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T value = std::move(q_.front());
    q_.pop_front();
    return value;
  }

  void close() {
    {
      std::lock_guard<std::mutex> lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> q_;
  bool closed_ = false;
};

}  // namespace gridsweep
