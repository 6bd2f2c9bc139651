#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace subtree {

// Malformed user input: bad CSV cell, unknown role code, incompatible model
// file, ... Mapped to exit code 2 by the CLI.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure that survived input validation: non-convergent fit,
// degenerate system with no defined fallback, ... Mapped to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// SplitMix64 step; used to derive independent per-task RNG seeds from a master
// seed so parallel schedules cannot change results.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Runs fn(0..n_tasks-1), each index exactly once. Results must be written to
// per-index slots by the caller; the schedule is then invisible in the output.
inline void parallel_for(int n_tasks, int threads,
                         const std::function<void(int)>& fn) {
  if (n_tasks <= 0) return;
  if (threads <= 1 || n_tasks == 1) {
    for (int i = 0; i < n_tasks; ++i) fn(i);
    return;
  }
  int workers = std::min(threads, n_tasks);
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  std::mutex err_mutex;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n_tasks) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mutex);
          if (!failed.exchange(true)) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed) std::rethrow_exception(first_error);
}

// Resolved worker count: the SUBTREE_THREADS env var overrides the requested
// value; 0 means hardware concurrency.
int resolve_threads(int requested);

// Writes content to path via a temp file + rename so readers never observe a
// half-written file.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content);

}  // namespace subtree
