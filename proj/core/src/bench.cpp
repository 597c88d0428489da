#include "stablelink/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>

#include "stablelink/error.hpp"
#include "stablelink/executor.hpp"

namespace stablelink {

void validate(const BenchConfig& cfg) {
  if (cfg.n < 1) throw Error(Errc::Invariant, "n must be >= 1");
  if (cfg.f_per_object < 1) throw Error(Errc::Invariant, "f_per_object must be >= 1");
  if (cfg.trials < 1) throw Error(Errc::Invariant, "trials must be >= 1");
}

ObjectRegistry generate_synthetic(const BenchConfig& cfg,
                                  const std::filesystem::path& root) {
  validate(cfg);
  ObjectRegistry::init(root);
  ObjectRegistry reg = ObjectRegistry::open(root);

  auto page_round = [](uint64_t bytes) {
    return ((bytes + kPageSize - 1) / kPageSize) * kPageSize;
  };

  SharedObject exe;
  exe.name = "app";
  exe.kind = ObjectKind::Executable;
  uint64_t relocs = cfg.n * cfg.f_per_object;
  exe.image_size = page_round(relocs * kWordSize + kWordSize);

  // (library, function) pairs in a seed-shuffled order; GOT-style slots are
  // assigned sequentially so references from different libraries interleave.
  std::vector<std::pair<uint64_t, uint64_t>> pairs;
  pairs.reserve(relocs);
  for (uint64_t i = 1; i <= cfg.n; ++i)
    for (uint64_t j = 1; j <= cfg.f_per_object; ++j) pairs.emplace_back(i, j);
  uint64_t state = cfg.seed;
  for (size_t i = pairs.size(); i > 1; --i)
    std::swap(pairs[i - 1], pairs[splitmix64(state) % i]);

  exe.relocs.reserve(relocs);
  uint64_t slot = 0;
  for (const auto& [lib, fn] : pairs) {
    RelocInstruction rel;
    rel.type = RelocType::Direct;
    rel.offset = slot;
    rel.addend = 0;
    rel.symbol_name = "fn_" + std::to_string(lib) + "_" + std::to_string(fn);
    exe.relocs.push_back(std::move(rel));
    slot += kWordSize;
  }

  for (uint64_t i = 1; i <= cfg.n; ++i) {
    SharedObject lib;
    lib.name = "lib" + std::to_string(i);
    lib.kind = ObjectKind::Library;
    lib.image_size = page_round(16 * (cfg.f_per_object + 1) + kWordSize);
    lib.exports.reserve(cfg.f_per_object);
    for (uint64_t j = 1; j <= cfg.f_per_object; ++j) {
      SymbolDef def;
      def.name = "fn_" + std::to_string(i) + "_" + std::to_string(j);
      def.st_value = 16 * j;
      def.st_size = kWordSize;
      lib.exports.push_back(std::move(def));
    }
    exe.needed.push_back(lib.name);
    reg.update_obj(lib);
  }
  reg.update_obj(exe);
  reg.end_mgmt();
  return reg;
}

namespace {

struct Timing {
  double mean_s = 0;
  double p95_lo = 0;
  double p95_hi = 0;
};

// 95% confidence interval for the mean, Student t with n-1 dof.
Timing summarize(const std::vector<double>& samples) {
  // Two-sided 0.975 quantiles for 1..30 dof.
  static const double kT[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365,
                              2.306,  2.262, 2.228, 2.201, 2.179, 2.160, 2.145,
                              2.131,  2.120, 2.110, 2.101, 2.093, 2.086, 2.080,
                              2.074,  2.069, 2.064, 2.060, 2.056, 2.052, 2.048,
                              2.045,  2.042};
  Timing t;
  double sum = 0;
  for (double s : samples) sum += s;
  t.mean_s = sum / static_cast<double>(samples.size());
  if (samples.size() < 2) {
    t.p95_lo = t.p95_hi = t.mean_s;
    return t;
  }
  double var = 0;
  for (double s : samples) var += (s - t.mean_s) * (s - t.mean_s);
  var /= static_cast<double>(samples.size() - 1);
  size_t dof = samples.size() - 1;
  double tval = dof <= 30 ? kT[dof - 1] : 1.96;
  double half = tval * std::sqrt(var / static_cast<double>(samples.size()));
  t.p95_lo = t.mean_s - half;
  t.p95_hi = t.mean_s + half;
  return t;
}

double time_once(const std::function<void()>& fn) {
  auto start = std::chrono::steady_clock::now();
  fn();
  auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(stop - start).count();
}

}  // namespace

BenchResult run_bench(const BenchConfig& cfg,
                      const std::vector<std::pair<uint64_t, uint64_t>>& grid,
                      const std::filesystem::path& workdir) {
  if (grid.empty()) throw Error(Errc::Invariant, "empty benchmark grid");
  std::filesystem::create_directories(workdir);

  BenchResult result;
  for (const auto& [n, f] : grid) {
    BenchConfig point = cfg;
    point.n = n;
    point.f_per_object = f;
    std::filesystem::path root =
        workdir / ("gp_" + std::to_string(n) + "_" + std::to_string(f));
    std::filesystem::remove_all(root);
    ObjectRegistry reg = generate_synthetic(point, root);

    std::string table_bytes = read_file(root / "tables" / "app.rtab");
    RelocationTable table = parse_rtab(table_bytes);
    AddressSpace blank = assign_bases(table.load_set, cfg.seed);

    auto online = [&] {
      AddressSpace space = blank;
      dynamic_load(reg, "app", space, IndexStrategy::Hashed);
    };
    auto replay_once = [&] {
      AddressSpace space = blank;
      RelocationTable t = parse_rtab(table_bytes);
      replay(t, space);
    };

    // Probe counting runs once, outside the timed trials.
    LookupStats online_stats;
    {
      AddressSpace space = blank;
      dynamic_load(reg, "app", space, IndexStrategy::Hashed, &online_stats);
    }

    std::vector<double> online_samples, replay_samples;
    for (uint64_t i = 0; i < cfg.warmups; ++i) online();
    for (uint64_t i = 0; i < cfg.trials; ++i) online_samples.push_back(time_once(online));
    for (uint64_t i = 0; i < cfg.warmups; ++i) replay_once();
    for (uint64_t i = 0; i < cfg.trials; ++i)
      replay_samples.push_back(time_once(replay_once));

    Timing online_t = summarize(online_samples);
    Timing replay_t = summarize(replay_samples);
    result.rows.push_back(BenchRow{"ONLINE", n, f, online_t.mean_s, online_t.p95_lo,
                                   online_t.p95_hi, online_stats.total_probes()});
    result.rows.push_back(
        BenchRow{"REPLAY", n, f, replay_t.mean_s, replay_t.p95_lo, replay_t.p95_hi, 0});
  }
  return result;
}

std::string bench_csv(const BenchResult& result) {
  std::string out = "mode,n,f_per_object,mean_s,p95_lo,p95_hi,probes\n";
  char buf[256];
  for (const BenchRow& row : result.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%llu,%.9f,%.9f,%.9f,%llu\n",
                  row.mode.c_str(), static_cast<unsigned long long>(row.n),
                  static_cast<unsigned long long>(row.f_per_object), row.mean_s,
                  row.p95_lo, row.p95_hi,
                  static_cast<unsigned long long>(row.probes));
    out += buf;
  }
  return out;
}

}  // namespace stablelink
