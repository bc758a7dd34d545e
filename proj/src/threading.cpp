#include "chanloc/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace chanloc {

namespace {

std::size_t env_budget() {
  if (const char* env = std::getenv("CHANLOC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

std::size_t& budget_override() {
  static std::size_t value = 0;
  return value;
}

}  // namespace

std::size_t thread_budget() {
  if (budget_override() != 0) return budget_override();
  static const std::size_t resolved = env_budget();
  return resolved;
}

void set_thread_budget(std::size_t threads) { budget_override() = threads; }

bool strict_sequential() { return thread_budget() == 1; }

std::size_t chunk_count(std::size_t count) { return std::min(thread_budget(), std::max<std::size_t>(count, 1)); }

void parallel_chunks(std::size_t count,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  if (count == 0) return;
  const std::size_t chunks = chunk_count(count);
  if (chunks == 1) {
    body(0, 0, count);
    return;
  }
  const std::size_t per = (count + chunks - 1) / chunks;
  std::vector<std::exception_ptr> errors(chunks);
  std::vector<std::thread> workers;
  workers.reserve(chunks);
  for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
    const std::size_t begin = chunk * per;
    const std::size_t end = std::min(count, begin + per);
    if (begin >= end) break;
    workers.emplace_back([&, chunk, begin, end] {
      try {
        body(chunk, begin, end);
      } catch (...) {
        errors[chunk] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  parallel_chunks(count, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) body(i);
  });
}

}  // namespace chanloc
