#include "zigma/app/batch_queue.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace zigma::app {

std::size_t worker_threads() {
  if (const char* env = std::getenv("ZIGMA_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      // fall through to the hardware default
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

BatchStream::BatchStream(Producer produce, std::size_t begin, std::size_t end, std::size_t depth, bool threaded)
    : produce_(std::move(produce)), next_(begin), end_(end), queue_(depth) {
  if (!threaded || begin >= end) return;
  worker_ = std::thread([this, begin, end] {
    for (std::size_t step = begin; step < end; ++step) {
      Item item;
      try {
        item.batch = produce_(step);
      } catch (...) {
        item.error = std::current_exception();
      }
      const bool failed = static_cast<bool>(item.error);
      if (!queue_.push(std::move(item)) || failed) break;
    }
    queue_.close();
  });
}

BatchStream::~BatchStream() {
  queue_.close();
  if (worker_.joinable()) worker_.join();
}

Batch BatchStream::next() {
  if (next_ >= end_) throw std::out_of_range("batch stream exhausted");
  const std::size_t step = next_++;
  if (!worker_.joinable()) return produce_(step);
  auto item = queue_.pop();
  if (!item) throw std::runtime_error("batch producer stopped early");
  if (item->error) std::rethrow_exception(item->error);
  return std::move(item->batch);
}

}  // namespace zigma::app
