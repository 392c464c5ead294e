/*
Copyright 2026 the pbpnet authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
#pragma once

#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pbp {

// Error taxonomy shared by the library and the CLI. `kind()` is the
// machine-parsable error code the CLI prints and maps to exit codes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct InvalidInputError : Error {
  explicit InvalidInputError(const std::string& w) : Error("invalid-input", w) {}
};
struct ContractViolationError : Error {
  explicit ContractViolationError(const std::string& w) : Error("contract", w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error("data", w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric", w) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& w) : Error("checkpoint", w) {}
};

using RandomEngine = std::mt19937_64;

// SplitMix64 step; used to derive independent deterministic streams
// (per-sample, per-epoch, ...) from one user-facing seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Unbiased-enough bounded draw with a stable algorithm (independent of the
// standard library's distribution implementations).
inline std::uint64_t bounded_rand(RandomEngine& eng, std::uint64_t bound) {
  // bound >= 1
  std::uint64_t threshold = (0ull - bound) % bound;
  for (;;) {
    std::uint64_t r = eng();
    if (r >= threshold) return r % bound;
  }
}

inline double uniform_real(RandomEngine& eng, double lo, double hi) {
  // 53-bit mantissa draw, stable across platforms.
  double u = static_cast<double>(eng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

// Thread budget for internal parallelism. PBP_THREADS caps it; values that
// do not parse as a positive integer fall back to the hardware count.
inline int thread_budget() {
  unsigned hw = std::thread::hardware_concurrency();
  int budget = hw > 0 ? static_cast<int>(hw) : 1;
  if (const char* env = std::getenv("PBP_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) budget = static_cast<int>(v);
  }
  return budget;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers, splitting the index
// range into contiguous blocks. fn must not throw.
template <typename Fn>
void parallel_for(std::int64_t n, int threads, Fn&& fn) {
  if (n <= 0) return;
  int workers = std::min<std::int64_t>(threads, n);
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    std::int64_t lo = w * chunk;
    std::int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace pbp
