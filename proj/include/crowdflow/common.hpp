#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace crowdflow {

// Error taxonomy. Contract violations are programming errors at call sites;
// the rest map to failure modes of specific pipeline stages.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

// Shortest decimal form that parses back to the same 64-bit value.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw ParseError("not a number: '" + s + "'");
  return v;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Thread budget: CROWDFLOW_THREADS caps it, hardware cores by default.
inline unsigned thread_budget() {
  static const unsigned n = [] {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("CROWDFLOW_THREADS")) {
      long v = std::strtol(env, nullptr, 10);
      if (v >= 1) hw = static_cast<unsigned>(v) < hw ? static_cast<unsigned>(v) : hw;
    }
    return hw;
  }();
  return n;
}

// Runs fn(lo, hi) over a static partition of [0, n). Partitions are
// contiguous and thread-count independent writes must stay disjoint for
// determinism; callers only hand out per-index output slots.
template <class Fn>
void parallel_ranges(std::size_t n, Fn&& fn, std::size_t serial_cutoff = 4096) {
  const unsigned nt = thread_budget();
  if (n == 0) return;
  if (nt <= 1 || n <= serial_cutoff) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunks = nt;
  const std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(chunks);
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t lo = c * per;
    if (lo >= n) break;
    const std::size_t hi = std::min(n, lo + per);
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace crowdflow
