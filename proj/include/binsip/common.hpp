// SPDX-License-Identifier: Apache-2.0
//
// Shared error types and small utilities.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace binsip {

inline constexpr const char* kVersion = "binsip-0.1.0";
inline constexpr int kPipelineSampleRate = 16000;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad or missing inputs: files, manifests, shapes of stored artifacts.
struct DataError : Error {
  using Error::Error;
};

// Config schema violations and unusable parameter combinations.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

inline double db_from_power(double p) { return 10.0 * std::log10(p); }
inline double db_from_amplitude(double a) { return 20.0 * std::log10(a); }
inline double amplitude_from_db(double db) { return std::pow(10.0, db / 20.0); }
inline double power_from_db(double db) { return std::pow(10.0, db / 10.0); }

// Runs fn(i) for i in [0, n). Items are independent; with workers > 1 they are
// distributed in contiguous blocks so outputs stay index-addressed.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  unsigned nthreads = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  std::size_t chunk = (n + nthreads - 1) / nthreads;
  for (unsigned t = 0; t < nthreads; ++t) {
    std::size_t lo = t * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace binsip
