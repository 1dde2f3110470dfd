#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

#include "zigma/app/datasets.hpp"

namespace zigma::app {

// Worker threads allowed for this process: ZIGMA_THREADS when set to a
// positive integer, otherwise the hardware concurrency (at least 1).
std::size_t worker_threads();

// Blocking FIFO with a fixed capacity. close() wakes everyone; push then
// fails and pop drains what is left before returning nullopt.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity ? capacity : 1) {}

  bool push(T value) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<T> items_;
  bool closed_ = false;
};

// Batches for steps [begin, end). Each batch is a pure function of its step,
// so the sequence is the same whether a producer thread runs ahead or the
// batches are made on demand.
class BatchStream {
 public:
  using Producer = std::function<Batch(std::size_t step)>;

  BatchStream(Producer produce, std::size_t begin, std::size_t end, std::size_t depth, bool threaded);
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  // Throws std::out_of_range past the end and rethrows producer failures.
  Batch next();
  bool threaded() const { return worker_.joinable(); }

 private:
  struct Item {
    Batch batch;
    std::exception_ptr error;
  };

  Producer produce_;
  std::size_t next_, end_;
  BoundedQueue<Item> queue_;
  std::thread worker_;
};

}  // namespace zigma::app
