#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "stablelink/registry.hpp"

namespace stablelink {

struct BenchConfig {
  uint64_t n = 1;             // shared objects
  uint64_t f_per_object = 1;  // exported functions per object
  uint64_t trials = 10;
  uint64_t warmups = 5;
  uint64_t seed = 0;
};

void validate(const BenchConfig& cfg);

// Builds a registry at `root` with one executable ("app") needing n libraries
// ("lib1".."libn"); library i exports f uniquely named symbols fn_<i>_<j> and
// the executable carries one DIRECT relocation per generated symbol, in a
// seed-shuffled order. The registry is left in epoch mode with the table
// materialized. Byte-identical for identical configs.
ObjectRegistry generate_synthetic(const BenchConfig& cfg, const std::filesystem::path& root);

struct BenchRow {
  std::string mode;  // ONLINE or REPLAY
  uint64_t n = 0;
  uint64_t f_per_object = 0;
  double mean_s = 0;
  double p95_lo = 0;
  double p95_hi = 0;
  uint64_t probes = 0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
};

// For each grid point (n, f): times ONLINE (dynamic_load end to end, hashed
// index) against REPLAY (rtab deserialization + replay) with cfg warmups and
// trials. Address spaces are assigned outside the timed region for both
// modes. Means come with P95 confidence intervals (Student t, n-1 dof).
BenchResult run_bench(const BenchConfig& cfg,
                      const std::vector<std::pair<uint64_t, uint64_t>>& grid,
                      const std::filesystem::path& workdir);

// mode,n,f_per_object,mean_s,p95_lo,p95_hi,probes
std::string bench_csv(const BenchResult& result);

}  // namespace stablelink
